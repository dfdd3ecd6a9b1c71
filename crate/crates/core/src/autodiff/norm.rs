//! Per-channel batch normalization over `[N, C, ...]` tensors.

use crate::autodiff::graph::{Graph, StatUpdate, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

struct Layout {
    n: usize,
    c: usize,
    inner: usize,
}

impl Layout {
    fn count(&self) -> usize {
        self.n * self.inner
    }

    /// Every contiguous run of channel `ch`.
    fn runs<'a, S>(&self, data: &'a [S], ch: usize) -> impl Iterator<Item = &'a [S]> + 'a {
        let (c, inner) = (self.c, self.inner);
        (0..self.n).map(move |b| &data[(b * c + ch) * inner..(b * c + ch + 1) * inner])
    }
}

impl<S: Scalar> Graph<S> {
    fn bn_layout(&self, x: Var, gamma: Var, beta: Var) -> Result<Layout> {
        let xs = self.shape(x);
        if xs.len() < 2 || self.value(gamma).len() != xs[1] || self.value(beta).len() != xs[1] {
            return Err(shape_err!(
                "batch_norm: input {:?}, gamma {:?}, beta {:?}",
                xs,
                self.shape(gamma),
                self.shape(beta)
            ));
        }
        Ok(Layout {
            n: xs[0],
            c: xs[1],
            inner: xs[2..].iter().product(),
        })
    }

    /// Normalize with batch statistics. Returns the output together with the
    /// biased batch mean and the unbiased batch variance per channel.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, Vec<S>, Vec<S>)> {
        let lay = self.bn_layout(x, gamma, beta)?;
        let m = S::lit(lay.count() as f64);
        let eps = S::lit(BN_EPS);
        let xv = self.value(x).data();
        let mut mean = vec![S::zero(); lay.c];
        let mut var = vec![S::zero(); lay.c];
        for ch in 0..lay.c {
            let mu = lay.runs(xv, ch).flat_map(|r| r.iter().copied()).sum::<S>() / m;
            let v = lay
                .runs(xv, ch)
                .flat_map(|r| r.iter().map(move |&a| (a - mu) * (a - mu)))
                .sum::<S>()
                / m;
            mean[ch] = mu;
            var[ch] = v;
        }
        let invstd: Vec<S> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
        let out = self.affine_normalize(x, gamma, beta, &lay, &mean, &invstd);
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        let unbiased: Vec<S> = if lay.count() > 1 {
            let k = m / (m - S::one());
            var.iter().map(|&v| v * k).collect()
        } else {
            var.clone()
        };
        let saved_mean = mean.clone();
        let var_out = self.push(
            value,
            vec![x, gamma, beta],
            Box::new(move |ctx| {
                let xv = ctx.inputs[0].data();
                let gv = ctx.inputs[1].data();
                let mut dgamma = vec![S::zero(); lay.c];
                let mut dbeta = vec![S::zero(); lay.c];
                for ch in 0..lay.c {
                    let (mu, is) = (saved_mean[ch], invstd[ch]);
                    for (gr, xr) in lay.runs(ctx.grad, ch).zip(lay.runs(xv, ch)) {
                        for (&g, &a) in gr.iter().zip(xr) {
                            dbeta[ch] += g;
                            dgamma[ch] += g * (a - mu) * is;
                        }
                    }
                }
                let dx = ctx.needs[0].then(|| {
                    let mut dx = vec![S::zero(); xv.len()];
                    for b in 0..lay.n {
                        for ch in 0..lay.c {
                            let off = (b * lay.c + ch) * lay.inner;
                            let (mu, is) = (saved_mean[ch], invstd[ch]);
                            let k = gv[ch] * is / m;
                            for i in off..off + lay.inner {
                                let xhat = (xv[i] - mu) * is;
                                dx[i] = k * (m * ctx.grad[i] - dbeta[ch] - xhat * dgamma[ch]);
                            }
                        }
                    }
                    dx
                });
                vec![dx, ctx.needs[1].then_some(dgamma), ctx.needs[2].then_some(dbeta)]
            }),
        );
        Ok((var_out, mean, unbiased))
    }

    /// Normalize with fixed running statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[S], var: &[S]) -> Result<Var> {
        let lay = self.bn_layout(x, gamma, beta)?;
        if mean.len() != lay.c || var.len() != lay.c {
            return Err(shape_err!("batch_norm_eval: running statistics for {} channels", mean.len()));
        }
        let eps = S::lit(BN_EPS);
        let invstd: Vec<S> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
        let out = self.affine_normalize(x, gamma, beta, &lay, mean, &invstd);
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        let mean = mean.to_vec();
        Ok(self.push(
            value,
            vec![x, gamma, beta],
            Box::new(move |ctx| {
                let xv = ctx.inputs[0].data();
                let gv = ctx.inputs[1].data();
                let mut dgamma = vec![S::zero(); lay.c];
                let mut dbeta = vec![S::zero(); lay.c];
                let mut dx = ctx.needs[0].then(|| vec![S::zero(); xv.len()]);
                for b in 0..lay.n {
                    for ch in 0..lay.c {
                        let off = (b * lay.c + ch) * lay.inner;
                        for i in off..off + lay.inner {
                            let g = ctx.grad[i];
                            dbeta[ch] += g;
                            dgamma[ch] += g * (xv[i] - mean[ch]) * invstd[ch];
                            if let Some(dx) = dx.as_mut() {
                                dx[i] = g * gv[ch] * invstd[ch];
                            }
                        }
                    }
                }
                vec![dx, ctx.needs[1].then_some(dgamma), ctx.needs[2].then_some(dbeta)]
            }),
        ))
    }

    fn affine_normalize(&self, x: Var, gamma: Var, beta: Var, lay: &Layout, mean: &[S], invstd: &[S]) -> Vec<S> {
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut out = vec![S::zero(); xv.len()];
        for b in 0..lay.n {
            for ch in 0..lay.c {
                let off = (b * lay.c + ch) * lay.inner;
                let k = gv[ch] * invstd[ch];
                for i in off..off + lay.inner {
                    out[i] = (xv[i] - mean[ch]) * k + bv[ch];
                }
            }
        }
        out
    }

    pub(crate) fn record_stats(&mut self, update: StatUpdate<S>) {
        self.stat_updates.push(update);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_input(seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(vec![3, 2, 4, 5], |_| rng.random_range(-3.0..5.0))
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let x = random_input(3);
        let mut g = Graph::new();
        let xv = g.constant(x);
        let gamma = g.constant(Tensor::full(vec![2], 1.0));
        let beta = g.constant(Tensor::zeros(vec![2]));
        let (y, _, _) = g.batch_norm_train(xv, gamma, beta).unwrap();
        let lay = Layout { n: 3, c: 2, inner: 20 };
        for ch in 0..2 {
            let vals: Vec<f64> = lay.runs(g.value(y).data(), ch).flatten().copied().collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-4, "variance {v}");
        }
    }

    #[test]
    fn eval_mode_matches_running_formula() {
        let x = random_input(4);
        let (rm, rv) = ([0.3, -1.2], [2.0, 0.5]);
        let (gm, bt) = ([1.5, -0.7], [0.1, 0.2]);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let gamma = g.constant(Tensor::new(vec![2], gm.to_vec()).unwrap());
        let beta = g.constant(Tensor::new(vec![2], bt.to_vec()).unwrap());
        let y = g.batch_norm_eval(xv, gamma, beta, &rm, &rv).unwrap();
        for (i, (&a, &out)) in x.data().iter().zip(g.value(y).data()).enumerate() {
            let ch = (i / 20) % 2;
            let expect = gm[ch] * (a - rm[ch]) / (rv[ch] + BN_EPS).sqrt() + bt[ch];
            assert!((out - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_channel_stays_finite() {
        let mut g = Graph::new();
        let xv = g.constant(Tensor::full(vec![2, 1, 3], 4.0f64));
        let gamma = g.constant(Tensor::full(vec![1], 1.0));
        let beta = g.constant(Tensor::zeros(vec![1]));
        let (y, mean, var) = g.batch_norm_train(xv, gamma, beta).unwrap();
        assert!(g.value(y).data().iter().all(|v| *v == 0.0));
        assert_eq!(mean, vec![4.0]);
        assert_eq!(var, vec![0.0]);
    }
}
