use crate::autodiff::graph::{Graph, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

impl<S: Scalar> Graph<S> {
    /// Matrix product of `a: [M, K]` and `b: [K, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err!("matmul: {:?} x {:?}", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![S::zero(); m * n];
        S::gemm(
            m,
            k,
            n,
            S::one(),
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            S::zero(),
            &mut out,
            n as isize,
            1,
        );
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(
            value,
            vec![a, b],
            Box::new(move |ctx| {
                let (av, bv) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let da = ctx.needs[0].then(|| {
                    let mut da = vec![S::zero(); m * k];
                    S::gemm(m, n, k, S::one(), ctx.grad, n as isize, 1, bv, 1, n as isize, S::zero(), &mut da, k as isize, 1);
                    da
                });
                let db = ctx.needs[1].then(|| {
                    let mut db = vec![S::zero(); k * n];
                    S::gemm(k, m, n, S::one(), av, 1, k as isize, ctx.grad, n as isize, 1, S::zero(), &mut db, n as isize, 1);
                    db
                });
                vec![da, db]
            }),
        ))
    }

    /// Add `b: [N]` to every row of `x: [M, N]`.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let n = self.value(b).len();
        if sx.len() != 2 || sx[1] != n {
            return Err(shape_err!("add_row_bias: {:?} with bias of {}", sx, n));
        }
        let bv = self.value(b).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            row.iter_mut().zip(&bv).for_each(|(v, &c)| *v += c);
        }
        let value = Tensor::new(sx, data)?;
        Ok(self.push(
            value,
            vec![x, b],
            Box::new(move |ctx| {
                let db = ctx.needs[1].then(|| {
                    let mut db = vec![S::zero(); n];
                    for row in ctx.grad.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                    }
                    db
                });
                vec![ctx.needs[0].then(|| ctx.grad.to_vec()), db]
            }),
        ))
    }

    /// Swap the last two axes of `x: [..., A, B]`.
    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let mut shape = self.shape(x).to_vec();
        let r = shape.len();
        if r < 2 {
            return Err(shape_err!("transpose_last2: rank {} input", r));
        }
        let (a, b) = (shape[r - 2], shape[r - 1]);
        shape.swap(r - 2, r - 1);
        let data = transpose_blocks(self.value(x).data(), a, b);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(
            value,
            vec![x],
            Box::new(move |ctx| vec![Some(transpose_blocks(ctx.grad, b, a))]),
        ))
    }
}

/// Transpose each consecutive `a x b` block of `src`.
fn transpose_blocks<S: Copy + Default>(src: &[S], a: usize, b: usize) -> Vec<S> {
    let mut out = vec![S::default(); src.len()];
    for (blk, dst) in src.chunks(a * b).zip(out.chunks_mut(a * b)) {
        for i in 0..a {
            for j in 0..b {
                dst[j * a + i] = blk[i * b + j];
            }
        }
    }
    out
}
