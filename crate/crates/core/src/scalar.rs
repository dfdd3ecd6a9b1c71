//! Floating point element type shared by tensors, networks and optimizers.
//!
//! Everything numeric in the crate is generic over [`Scalar`]. Training runs in
//! `f32`; gradient checks run in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Bit width of the in-memory representation.
    const BITS: u32;

    /// `c <- alpha * a * b + beta * c` on strided row/column-major views.
    ///
    /// Shapes are `a: m x k`, `b: k x n`, `c: m x n`; strides are in elements.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

macro_rules! check_extent {
    ($buf:expr, $rows:expr, $cols:expr, $rs:expr, $cs:expr) => {
        if $rows > 0 && $cols > 0 {
            let last = ($rows as isize - 1) * $rs + ($cols as isize - 1) * $cs;
            assert!(
                $rs >= 0 && $cs >= 0 && (last as usize) < $buf.len(),
                "gemm operand out of bounds"
            );
        }
    };
}

impl Scalar for f32 {
    const BITS: u32 = 32;

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: &[f32],
        rsa: isize,
        csa: isize,
        b: &[f32],
        rsb: isize,
        csb: isize,
        beta: f32,
        c: &mut [f32],
        rsc: isize,
        csc: isize,
    ) {
        check_extent!(a, m, k, rsa, csa);
        check_extent!(b, k, n, rsb, csb);
        check_extent!(c, m, n, rsc, csc);
        // SAFETY: extents checked above; strides are non-negative.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
    }
}

impl Scalar for f64 {
    const BITS: u32 = 64;

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: &[f64],
        rsa: isize,
        csa: isize,
        b: &[f64],
        rsb: isize,
        csb: isize,
        beta: f64,
        c: &mut [f64],
        rsc: isize,
        csc: isize,
    ) {
        check_extent!(a, m, k, rsa, csa);
        check_extent!(b, k, n, rsb, csb);
        check_extent!(c, m, n, rsc, csc);
        // SAFETY: extents checked above; strides are non-negative.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
    }
}
