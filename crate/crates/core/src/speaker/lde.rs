//! Learnable dictionary encoding: soft assignment of frames to `K` centres
//! and pooling of the per-centre residuals.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

pub const LDE_EPS: f64 = 1e-8;

/// Soft assignments `w[t, k]` of `frames: [T, D]` to the centres.
pub fn assignments<S: Scalar>(frames: &[S], d: usize, mu: &[S], scales: &[S], biases: &[S]) -> Vec<S> {
    let k = scales.len();
    let t = frames.len() / d;
    let mut w = vec![S::zero(); t * k];
    for ti in 0..t {
        let x = &frames[ti * d..(ti + 1) * d];
        let row = &mut w[ti * k..(ti + 1) * k];
        for (ki, r) in row.iter_mut().enumerate() {
            let c = &mu[ki * d..(ki + 1) * d];
            let d2: S = x.iter().zip(c).map(|(&a, &b)| (a - b) * (a - b)).sum();
            *r = -scales[ki] * d2 + biases[ki];
        }
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut z = S::zero();
        for r in row.iter_mut() {
            *r = (*r - max).exp();
            z += *r;
        }
        row.iter_mut().for_each(|r| *r /= z);
    }
    w
}

impl<S: Scalar> Graph<S> {
    /// Pool `x: [N, T, D]` into `[N, K * D]` against centres `mu: [K, D]`
    /// with positive `scales: [K]` and `biases: [K]`.
    pub fn lde_pool(&mut self, x: Var, mu: Var, scales: Var, biases: Var, eps: S) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ms = self.shape(mu).to_vec();
        if xs.len() != 3 || ms.len() != 2 || xs[2] != ms[1] || xs[1] == 0 {
            return Err(shape_err!("lde_pool: frames {:?} against centres {:?}", xs, ms));
        }
        let (n, t, d, k) = (xs[0], xs[1], xs[2], ms[0]);
        if self.value(scales).len() != k || self.value(biases).len() != k {
            return Err(shape_err!("lde_pool: {} centres need {} scales and biases", k, k));
        }
        let xv = self.value(x).data();
        let (muv, sv, bv) = (self.value(mu).data(), self.value(scales).data(), self.value(biases).data());
        let mut out = vec![S::zero(); n * k * d];
        for ni in 0..n {
            let frames = &xv[ni * t * d..(ni + 1) * t * d];
            let w = assignments(frames, d, muv, sv, bv);
            let e = &mut out[ni * k * d..(ni + 1) * k * d];
            for ki in 0..k {
                let c = &muv[ki * d..(ki + 1) * d];
                let ek = &mut e[ki * d..(ki + 1) * d];
                let mut total = S::zero();
                for ti in 0..t {
                    let wt = w[ti * k + ki];
                    total += wt;
                    for ((o, &xv), &cv) in ek.iter_mut().zip(&frames[ti * d..(ti + 1) * d]).zip(c) {
                        *o += wt * (xv - cv);
                    }
                }
                let denom = total + eps;
                ek.iter_mut().for_each(|o| *o /= denom);
            }
        }
        let value = Tensor::new(vec![n, k * d], out)?;
        Ok(self.push(
            value,
            vec![x, mu, scales, biases],
            Box::new(move |c| {
                let (xv, muv, sv, bv) = (c.inputs[0].data(), c.inputs[1].data(), c.inputs[2].data(), c.inputs[3].data());
                let ev = c.output.data();
                let mut dx = vec![S::zero(); n * t * d];
                let mut dmu = vec![S::zero(); k * d];
                let mut ds = vec![S::zero(); k];
                let mut db = vec![S::zero(); k];
                let two = S::lit(2.0);
                for ni in 0..n {
                    let frames = &xv[ni * t * d..(ni + 1) * t * d];
                    let w = assignments(frames, d, muv, sv, bv);
                    let gout = &c.grad[ni * k * d..(ni + 1) * k * d];
                    let e = &ev[ni * k * d..(ni + 1) * k * d];
                    let denom: Vec<S> = (0..k).map(|ki| (0..t).map(|ti| w[ti * k + ki]).sum::<S>() + eps).collect();
                    let dxn = &mut dx[ni * t * d..(ni + 1) * t * d];
                    let mut gw = vec![S::zero(); k];
                    for ti in 0..t {
                        let xt = &frames[ti * d..(ti + 1) * d];
                        let dxt = &mut dxn[ti * d..(ti + 1) * d];
                        // gradient with respect to the assignment weights
                        for ki in 0..k {
                            let (gk, ekv, ck) = (&gout[ki * d..(ki + 1) * d], &e[ki * d..(ki + 1) * d], &muv[ki * d..(ki + 1) * d]);
                            let mut acc = S::zero();
                            for j in 0..d {
                                acc += gk[j] * (xt[j] - ck[j] - ekv[j]);
                            }
                            gw[ki] = acc / denom[ki];
                        }
                        let wt = &w[ti * k..(ti + 1) * k];
                        let mean: S = wt.iter().zip(&gw).map(|(&a, &b)| a * b).sum();
                        for ki in 0..k {
                            let wk = wt[ki];
                            let (gk, ck) = (&gout[ki * d..(ki + 1) * d], &muv[ki * d..(ki + 1) * d]);
                            let da = wk * (gw[ki] - mean);
                            let direct = wk / denom[ki];
                            let mut d2 = S::zero();
                            let dmuk = &mut dmu[ki * d..(ki + 1) * d];
                            for j in 0..d {
                                let r = xt[j] - ck[j];
                                d2 += r * r;
                                let through_logit = -da * sv[ki] * two * r;
                                dxt[j] += direct * gk[j] + through_logit;
                                dmuk[j] += -direct * gk[j] - through_logit;
                            }
                            ds[ki] += -da * d2;
                            db[ki] += da;
                        }
                    }
                }
                vec![
                    c.needs[0].then_some(dx),
                    c.needs[1].then_some(dmu),
                    c.needs[2].then_some(ds),
                    c.needs[3].then_some(db),
                ]
            }),
        ))
    }
}

/// LDE pooling layer; scales are stored as logarithms to stay positive.
#[derive(Clone, Debug)]
pub struct Lde {
    pub centres: ParamId,
    pub log_scales: ParamId,
    pub biases: ParamId,
    pub components: usize,
    pub dim: usize,
}

impl Lde {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, components: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        Lde {
            centres: store.add(
                format!("{name}.centres"),
                Tensor::from_fn(vec![components, dim], |_| S::lit(normal.sample(rng))),
            ),
            log_scales: store.add(
                format!("{name}.log_scales"),
                Tensor::full(vec![components], S::lit((1.0 / dim as f64).ln())),
            ),
            biases: store.add(format!("{name}.biases"), Tensor::zeros(vec![components])),
            components,
            dim,
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, frames: Var) -> Result<Var> {
        let mu = g.param(store, self.centres);
        let ls = g.param(store, self.log_scales);
        let scales = g.exp(ls);
        let b = g.param(store, self.biases);
        g.lde_pool(frames, mu, scales, b, S::lit(LDE_EPS))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct double-loop evaluation.
    fn oracle(x: &[f64], t: usize, d: usize, mu: &[f64], s: &[f64], b: &[f64]) -> Vec<f64> {
        let k = s.len();
        let mut out = vec![0.0; k * d];
        let mut logits = vec![vec![0.0; k]; t];
        for ti in 0..t {
            for ki in 0..k {
                let mut d2 = 0.0;
                for j in 0..d {
                    d2 += (x[ti * d + j] - mu[ki * d + j]).powi(2);
                }
                logits[ti][ki] = -s[ki] * d2 + b[ki];
            }
        }
        for ki in 0..k {
            let mut total = 0.0;
            for ti in 0..t {
                let z: f64 = logits[ti].iter().map(|a| a.exp()).sum();
                let w = logits[ti][ki].exp() / z;
                total += w;
                for j in 0..d {
                    out[ki * d + j] += w * (x[ti * d + j] - mu[ki * d + j]);
                }
            }
            for j in 0..d {
                out[ki * d + j] /= total + LDE_EPS;
            }
        }
        out
    }

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn pool(x: &[f64], shape: [usize; 3], mu: &[f64], s: &[f64], b: &[f64]) -> Vec<f64> {
        let mut g = Graph::new();
        let k = s.len();
        let xv = g.constant(Tensor::new(shape.to_vec(), x.to_vec()).unwrap());
        let m = g.constant(Tensor::new(vec![k, shape[2]], mu.to_vec()).unwrap());
        let sv = g.constant(Tensor::new(vec![k], s.to_vec()).unwrap());
        let bv = g.constant(Tensor::new(vec![k], b.to_vec()).unwrap());
        let y = g.lde_pool(xv, m, sv, bv, LDE_EPS).unwrap();
        g.value(y).data().to_vec()
    }

    #[test]
    fn single_component_is_mean_residual() {
        let x = vec![1.0, 2.0, 3.0, 6.0, -1.0, 1.0];
        let out = pool(&x, [1, 3, 2], &[0.5, 0.5], &[0.7], &[0.2]);
        assert!((out[0] - (1.0 - 0.5)).abs() < 1e-7);
        assert!((out[1] - (3.0 - 0.5)).abs() < 1e-7);
    }

    #[test]
    fn frames_on_a_centre_have_zero_residual_there() {
        let mu = vec![0.0, 0.0, 10.0, 10.0];
        let x = vec![10.0, 10.0, 10.0, 10.0];
        let out = pool(&x, [1, 2, 2], &mu, &[1.0, 1.0], &[0.0, 0.0]);
        assert!(out[2].abs() < 1e-12 && out[3].abs() < 1e-12);
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, t, d, k) = (2, 5, 3, 4);
        let x = random(n * t * d, &mut rng);
        let mu = random(k * d, &mut rng);
        let s: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..2.0)).collect();
        let b = random(k, &mut rng);
        let out = pool(&x, [n, t, d], &mu, &s, &b);
        for ni in 0..n {
            let expect = oracle(&x[ni * t * d..(ni + 1) * t * d], t, d, &mu, &s, &b);
            for (a, e) in out[ni * k * d..(ni + 1) * k * d].iter().zip(&expect) {
                assert!((a - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, t, d, k) = (2, 4, 3, 3);
        let inputs = [
            Tensor::new(vec![n, t, d], random(n * t * d, &mut rng)).unwrap(),
            Tensor::new(vec![k, d], random(k * d, &mut rng)).unwrap(),
            Tensor::new(vec![k], (0..k).map(|_| rng.random_range(0.3..1.5)).collect()).unwrap(),
            Tensor::new(vec![k], random(k, &mut rng)).unwrap(),
        ];
        let w = Tensor::new(vec![n, k * d], random(n * k * d, &mut rng)).unwrap();
        let report = gradcheck::check_inputs(&inputs, 1e-6, |g, v| {
            let y = g.lde_pool(v[0], v[1], v[2], v[3], LDE_EPS)?;
            let wv = g.constant(w.clone());
            let y = g.mul(y, wv)?;
            Ok(g.sum(y))
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    proptest! {
        #[test]
        fn assignments_form_distributions(
            x in prop::collection::vec(-3.0f64..3.0, 12),
            mu in prop::collection::vec(-3.0f64..3.0, 9),
            s in prop::collection::vec(0.01f64..5.0, 3),
            b in prop::collection::vec(-2.0f64..2.0, 3),
        ) {
            let w = assignments(&x, 3, &mu, &s, &b);
            for row in w.chunks(3) {
                prop_assert!(row.iter().all(|&v| v >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
