//! 2-D convolution over `[N, C, H, W]` tensors via im2col and GEMM.

use crate::autodiff::graph::{Graph, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Stride, dilation and zero padding per axis, as `(height, width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: (usize, usize),
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec {
            stride: (1, 1),
            dilation: (1, 1),
            padding: (0, 0),
        }
    }
}

impl Conv2dSpec {
    /// Stride 1 with the padding that keeps spatial size for an odd kernel.
    pub fn same(kernel: (usize, usize), dilation: (usize, usize)) -> Self {
        Conv2dSpec {
            stride: (1, 1),
            dilation,
            padding: (dilation.0 * (kernel.0 / 2), dilation.1 * (kernel.1 / 2)),
        }
    }

    pub fn output_size(&self, input: (usize, usize), kernel: (usize, usize)) -> Option<(usize, usize)> {
        let axis = |n: usize, k: usize, s: usize, d: usize, p: usize| {
            let span = d * (k - 1) + 1;
            let padded = n + 2 * p;
            (s > 0 && d > 0 && padded >= span).then(|| (padded - span) / s + 1)
        };
        Some((
            axis(input.0, kernel.0, self.stride.0, self.dilation.0, self.padding.0)?,
            axis(input.1, kernel.1, self.stride.1, self.dilation.1, self.padding.1)?,
        ))
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    spec: Conv2dSpec,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Input column index for output column `o` and kernel tap `k` along one axis.
    #[inline]
    fn src(o: usize, k: usize, s: usize, d: usize, p: usize, n: usize) -> Option<usize> {
        let i = (o * s + k * d) as isize - p as isize;
        (i >= 0 && (i as usize) < n).then_some(i as usize)
    }

    fn im2col<S: Scalar>(&self, x: &[S], col: &mut [S]) {
        let g = self;
        let (sh, sw) = g.spec.stride;
        let (dh, dw) = g.spec.dilation;
        let (ph, pw) = g.spec.padding;
        let ncol = g.cols();
        for c in 0..g.c {
            let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let row = (c * g.kh + ki) * g.kw + kj;
                    let dst = &mut col[row * ncol..(row + 1) * ncol];
                    for oh in 0..g.ho {
                        let out = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                        let Some(ih) = Self::src(oh, ki, sh, dh, ph, g.h) else {
                            out.fill(S::zero());
                            continue;
                        };
                        let src_row = &plane[ih * g.w..(ih + 1) * g.w];
                        if sw == 1 {
                            // valid output range: 0 <= ow + kj*dw - pw < w
                            let shift = kj * dw;
                            let lo = pw.saturating_sub(shift).min(g.wo);
                            let hi = (g.w + pw).saturating_sub(shift).min(g.wo).max(lo);
                            out[..lo].fill(S::zero());
                            out[hi..].fill(S::zero());
                            if hi > lo {
                                let start = lo + shift - pw;
                                out[lo..hi].copy_from_slice(&src_row[start..start + (hi - lo)]);
                            }
                        } else {
                            for (ow, o) in out.iter_mut().enumerate() {
                                *o = match Self::src(ow, kj, sw, dw, pw, g.w) {
                                    Some(iw) => src_row[iw],
                                    None => S::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<S: Scalar>(&self, col: &[S], dx: &mut [S]) {
        let g = self;
        let (sh, sw) = g.spec.stride;
        let (dh, dw) = g.spec.dilation;
        let (ph, pw) = g.spec.padding;
        let ncol = g.cols();
        for c in 0..g.c {
            let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let row = (c * g.kh + ki) * g.kw + kj;
                    let src = &col[row * ncol..(row + 1) * ncol];
                    for oh in 0..g.ho {
                        let Some(ih) = Self::src(oh, ki, sh, dh, ph, g.h) else {
                            continue;
                        };
                        let inp = &src[oh * g.wo..(oh + 1) * g.wo];
                        let dst_row = &mut plane[ih * g.w..(ih + 1) * g.w];
                        for (ow, &v) in inp.iter().enumerate() {
                            if let Some(iw) = Self::src(ow, kj, sw, dw, pw, g.w) {
                                dst_row[iw] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<S: Scalar> Graph<S> {
    /// Cross-correlation of `x: [N, C, H, W]` with `w: [C', C, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, spec: Conv2dSpec) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(shape_err!("conv2d: input {:?} with kernel {:?}", xs, ws));
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (co, kh, kw) = (ws[0], ws[2], ws[3]);
        let (ho, wo) = spec
            .output_size((h, wd), (kh, kw))
            .ok_or_else(|| shape_err!("conv2d: kernel {:?} {:?} does not fit input {:?}", ws, spec, xs))?;
        let geo = Geometry {
            c,
            h,
            w: wd,
            kh,
            kw,
            ho,
            wo,
            spec,
        };
        let (rows, cols) = (geo.rows(), geo.cols());
        let mut out = vec![S::zero(); n * co * cols];
        let mut col = vec![S::zero(); rows * cols];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for b in 0..n {
                geo.im2col(&xv[b * c * h * wd..(b + 1) * c * h * wd], &mut col);
                S::gemm(
                    co,
                    rows,
                    cols,
                    S::one(),
                    wv,
                    rows as isize,
                    1,
                    &col,
                    cols as isize,
                    1,
                    S::zero(),
                    &mut out[b * co * cols..(b + 1) * co * cols],
                    cols as isize,
                    1,
                );
            }
        }
        let value = Tensor::new(vec![n, co, ho, wo], out)?;
        Ok(self.push(
            value,
            vec![x, w],
            Box::new(move |ctx| {
                let xv = ctx.inputs[0].data();
                let wv = ctx.inputs[1].data();
                let mut dx = ctx.needs[0].then(|| vec![S::zero(); xv.len()]);
                let mut dw = ctx.needs[1].then(|| vec![S::zero(); wv.len()]);
                let mut col = vec![S::zero(); rows * cols];
                for b in 0..n {
                    let gout = &ctx.grad[b * co * cols..(b + 1) * co * cols];
                    if let Some(dw) = dw.as_mut() {
                        geo.im2col(&xv[b * c * h * wd..(b + 1) * c * h * wd], &mut col);
                        S::gemm(
                            co,
                            cols,
                            rows,
                            S::one(),
                            gout,
                            cols as isize,
                            1,
                            &col,
                            1,
                            cols as isize,
                            S::one(),
                            dw,
                            rows as isize,
                            1,
                        );
                    }
                    if let Some(dx) = dx.as_mut() {
                        S::gemm(
                            rows,
                            co,
                            cols,
                            S::one(),
                            wv,
                            1,
                            rows as isize,
                            gout,
                            cols as isize,
                            1,
                            S::zero(),
                            &mut col,
                            cols as isize,
                            1,
                        );
                        geo.col2im(&col, &mut dx[b * c * h * wd..(b + 1) * c * h * wd]);
                    }
                }
                vec![dx, dw]
            }),
        ))
    }

    /// Add a per-channel bias `b: [C]` to `x: [N, C, ...]`.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let c = self.value(b).len();
        if xs.len() < 2 || xs[1] != c {
            return Err(shape_err!("add_channel_bias: input {:?} with {} biases", xs, c));
        }
        let inner: usize = xs[2..].iter().product();
        let bv = self.value(b).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for (i, chunk) in data.chunks_mut(inner).enumerate() {
            let bias = bv[i % c];
            chunk.iter_mut().for_each(|v| *v += bias);
        }
        let value = Tensor::new(xs, data)?;
        Ok(self.push(
            value,
            vec![x, b],
            Box::new(move |ctx| {
                let db = ctx.needs[1].then(|| {
                    let mut db = vec![S::zero(); c];
                    for (i, chunk) in ctx.grad.chunks(inner).enumerate() {
                        db[i % c] += chunk.iter().copied().sum::<S>();
                    }
                    db
                });
                vec![ctx.needs[0].then(|| ctx.grad.to_vec()), db]
            }),
        ))
    }

    /// Nearest-neighbour upsampling of `x: [N, C, H, W]` by integer factors.
    pub fn upsample_nearest(&mut self, x: Var, factor: (usize, usize)) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || factor.0 == 0 || factor.1 == 0 {
            return Err(shape_err!("upsample_nearest: input {:?} factor {:?}", xs, factor));
        }
        let (planes, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
        let (fh, fw) = factor;
        let (ho, wo) = (h * fh, w * fw);
        let xv = self.value(x).data();
        let mut out = vec![S::zero(); planes * ho * wo];
        for p in 0..planes {
            for i in 0..ho {
                for j in 0..wo {
                    out[(p * ho + i) * wo + j] = xv[(p * h + i / fh) * w + j / fw];
                }
            }
        }
        let value = Tensor::new(vec![xs[0], xs[1], ho, wo], out)?;
        Ok(self.push(
            value,
            vec![x],
            Box::new(move |ctx| {
                let mut dx = vec![S::zero(); planes * h * w];
                for p in 0..planes {
                    for i in 0..ho {
                        for j in 0..wo {
                            dx[(p * h + i / fh) * w + j / fw] += ctx.grad[(p * ho + i) * wo + j];
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop cross-correlation.
    fn loop_conv(x: &Tensor<f64>, w: &Tensor<f64>, spec: Conv2dSpec) -> Tensor<f64> {
        let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (co, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
        let (ho, wo) = spec.output_size((h, wd), (kh, kw)).unwrap();
        let mut out = Tensor::zeros(vec![n, co, ho, wo]);
        for b in 0..n {
            for o in 0..co {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let ih = (i * spec.stride.0 + ki * spec.dilation.0) as isize - spec.padding.0 as isize;
                                    let iw = (j * spec.stride.1 + kj * spec.dilation.1) as isize - spec.padding.1 as isize;
                                    if ih < 0 || iw < 0 || ih >= h as isize || iw >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((b * c + ci) * h + ih as usize) * wd + iw as usize]
                                        * w.data()[((o * c + ci) * kh + ki) * kw + kj];
                                }
                            }
                        }
                        out.data_mut()[((b * co + o) * ho + i) * wo + j] = acc;
                    }
                }
            }
        }
        out
    }

    fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(vec![1, 1, 6, 7], &mut rng);
        let mut k = Tensor::zeros(vec![1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let kv = g.constant(k);
        let y = g.conv2d(xv, kv, Conv2dSpec::same((3, 3), (2, 3))).unwrap();
        assert_eq!(g.value(y), &x);
    }

    #[test]
    fn impulse_reveals_dilated_taps() {
        for d in 1..=3 {
            let mut x = Tensor::zeros(vec![1, 1, 9, 9]);
            x.data_mut()[4 * 9 + 4] = 1.0;
            let k = Tensor::full(vec![1, 1, 3, 3], 1.0);
            let mut g = Graph::new();
            let xv = g.constant(x);
            let kv = g.constant(k);
            let y = g.conv2d(xv, kv, Conv2dSpec::same((3, 3), (d, d))).unwrap();
            let out = g.value(y).data();
            for i in 0..9 {
                for j in 0..9 {
                    let hit = [4 - d, 4, 4 + d].contains(&i) && [4 - d, 4, 4 + d].contains(&j);
                    assert_eq!(out[i * 9 + j] != 0.0, hit, "d={d} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn matches_loop_oracle_across_geometries() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cases = [
            (vec![1, 1, 5, 5], vec![1, 1, 3, 3], Conv2dSpec::same((3, 3), (1, 1))),
            (vec![2, 3, 7, 9], vec![4, 3, 3, 3], Conv2dSpec::same((3, 3), (2, 3))),
            (
                vec![1, 2, 8, 6],
                vec![3, 2, 3, 3],
                Conv2dSpec {
                    stride: (2, 1),
                    dilation: (1, 2),
                    padding: (1, 2),
                },
            ),
            (vec![2, 2, 7, 11], vec![2, 2, 7, 9], Conv2dSpec::same((7, 9), (1, 1))),
            (
                vec![1, 1, 6, 6],
                vec![1, 1, 3, 3],
                Conv2dSpec {
                    stride: (2, 2),
                    dilation: (1, 1),
                    padding: (0, 0),
                },
            ),
        ];
        for (xs, ws, spec) in cases {
            let x = random(xs, &mut rng);
            let w = random(ws, &mut rng);
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let wv = g.constant(w.clone());
            let y = g.conv2d(xv, wv, spec).unwrap();
            let oracle = loop_conv(&x, &w, spec);
            assert_eq!(g.shape(y), oracle.shape());
            for (a, b) in g.value(y).data().iter().zip(oracle.data()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_channel_mismatch() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(vec![1, 2, 4, 4]));
        let w = g.constant(Tensor::zeros(vec![1, 3, 3, 3]));
        assert!(g.conv2d(x, w, Conv2dSpec::same((3, 3), (1, 1))).is_err());
    }
}
