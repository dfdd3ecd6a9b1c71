//! Multiplicative angular-margin softmax.

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Chebyshev polynomials `T_m(c) = cos(m acos c)` and `U_{m-1}(c)`.
fn chebyshev<S: Scalar>(m: u32, c: S) -> (S, S) {
    let two = S::lit(2.0);
    let (mut t_prev, mut t) = (S::one(), c);
    let (mut u_prev, mut u) = (S::zero(), S::one());
    for _ in 1..m {
        let t_next = two * c * t - t_prev;
        let u_next = two * c * u - u_prev;
        t_prev = t;
        t = t_next;
        u_prev = u;
        u = u_next;
    }
    (t, u)
}

/// Monotone margin function `psi(theta) = (-1)^k cos(m theta) - 2k` for
/// `theta` in `[k pi / m, (k + 1) pi / m]`, as a function of `c = cos theta`.
/// Returns `(psi, d psi / d c)`.
pub fn psi<S: Scalar>(m: u32, c: S) -> (S, S) {
    let c = c.max(-S::one()).min(S::one());
    let theta = c.as_f64().acos();
    let k = ((m as f64 * theta / std::f64::consts::PI).floor() as u32).min(m - 1);
    let (t, u) = chebyshev(m, c);
    let sign = if k % 2 == 0 { S::one() } else { -S::one() };
    (sign * t - S::lit(2.0 * k as f64), sign * S::lit(m as f64) * u)
}

/// Annealing weight `max(floor, start / (1 + gamma * iter))`.
pub fn anneal_lambda(iter: u64, start: f64, gamma: f64, floor: f64) -> f64 {
    (start / (1.0 + gamma * iter as f64)).max(floor)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AngularMargin {
    pub m: u32,
    pub lambda: f64,
    /// Multiplier on all logits.
    pub scale: f64,
}

impl<S: Scalar> Graph<S> {
    /// Divide each row of `x: [N, D]` by its Euclidean norm.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[1] == 0 {
            return Err(shape_err!("l2_normalize_rows: {:?}", s));
        }
        let d = s[1];
        let xv = self.value(x).data();
        let norms: Vec<S> = xv.chunks(d).map(|r| r.iter().map(|&v| v * v).sum::<S>().sqrt()).collect();
        if norms.iter().any(|&n| !(n > S::zero())) {
            return Err(Error::Invalid("cannot normalize a zero row".into()));
        }
        let data: Vec<S> = xv.chunks(d).zip(&norms).flat_map(|(r, &n)| r.iter().map(move |&v| v / n)).collect();
        let value = Tensor::new(s, data)?;
        Ok(self.push(
            value,
            vec![x],
            Box::new(move |c| {
                let y = c.output.data();
                let mut dx = Vec::with_capacity(y.len());
                for ((yr, gr), &n) in y.chunks(d).zip(c.grad.chunks(d)).zip(&norms) {
                    let dot: S = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    dx.extend(yr.iter().zip(gr).map(|(&yv, &gv)| (gv - dot * yv) / n));
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Mean cross-entropy over rows of a cosine matrix `cos: [N, C]` where
    /// each target logit is replaced by `(lambda cos + psi) / (1 + lambda)`.
    pub fn angular_margin_ce(&mut self, cos: Var, labels: &[usize], margin: AngularMargin) -> Result<Var> {
        let s = self.shape(cos).to_vec();
        if margin.m < 1 {
            return Err(Error::Invalid("angular margin m must be at least 1".into()));
        }
        if s.len() != 2 || labels.len() != s[0] || labels.iter().any(|&l| l >= s[1]) {
            return Err(shape_err!("angular_margin_ce: cosines {:?} with {} labels", s, labels.len()));
        }
        let (n, classes) = (s[0], s[1]);
        let (lam, scale) = (S::lit(margin.lambda), S::lit(margin.scale));
        let m = margin.m;
        let blend = move |c: S| {
            let (p, dp) = psi(m, c);
            ((lam * c + p) / (S::one() + lam), (lam + dp) / (S::one() + lam))
        };
        let cv = self.value(cos).data();
        let mut probs = vec![S::zero(); n * classes];
        let mut loss = S::zero();
        for i in 0..n {
            let row = &cv[i * classes..(i + 1) * classes];
            let logits: Vec<S> = (0..classes)
                .map(|j| scale * if j == labels[i] { blend(row[j]).0 } else { row[j] })
                .collect();
            let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
            let z: S = logits.iter().map(|&l| (l - max).exp()).sum();
            for j in 0..classes {
                probs[i * classes + j] = (logits[j] - max).exp() / z;
            }
            loss += z.ln() + max - logits[labels[i]];
        }
        let inv_n = S::one() / S::lit(n as f64);
        let labels = labels.to_vec();
        Ok(self.push(
            Tensor::scalar(loss * inv_n),
            vec![cos],
            Box::new(move |c| {
                let cv = c.inputs[0].data();
                let g = c.grad[0] * inv_n * scale;
                let mut d = vec![S::zero(); n * classes];
                for i in 0..n {
                    for j in 0..classes {
                        let k = i * classes + j;
                        d[k] = if j == labels[i] {
                            g * (probs[k] - S::one()) * blend(cv[k]).1
                        } else {
                            g * probs[k]
                        };
                    }
                }
                vec![Some(d)]
            }),
        ))
    }

    /// Cosine similarity matrix `[N, C]` between rows of `x: [N, D]` and
    /// rows of `w: [C, D]`.
    pub fn cosine_matrix(&mut self, x: Var, w: Var) -> Result<Var> {
        let xn = self.l2_normalize_rows(x)?;
        let wn = self.l2_normalize_rows(w)?;
        let wt = self.transpose_last2(wn)?;
        self.matmul(xn, wt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn psi_is_cos_m_theta_on_first_branch_and_monotone() {
        for m in 1..=4u32 {
            let mut prev = f64::INFINITY;
            for i in 0..=200 {
                let theta = std::f64::consts::PI * i as f64 / 200.0;
                let (p, _) = psi(m, theta.cos());
                assert!(p <= prev + 1e-12, "m={m} theta={theta}");
                prev = p;
                if theta < std::f64::consts::PI / m as f64 {
                    assert!((p - (m as f64 * theta).cos()).abs() < 1e-9);
                }
            }
        }
        assert_eq!(psi(1, 0.3f64).0, 0.3);
    }

    #[test]
    fn psi_derivative_matches_finite_differences() {
        for m in 1..=4u32 {
            for &c in &[-0.9f64, -0.4, 0.1, 0.45, 0.8] {
                let h = 1e-6;
                let fd = (psi(m, c + h).0 - psi(m, c - h).0) / (2.0 * h);
                assert!((fd - psi(m, c).1).abs() < 1e-5 * fd.abs().max(1.0), "m={m} c={c}");
            }
        }
    }

    fn cross_entropy(cos: &[f64], classes: usize, labels: &[usize]) -> f64 {
        let mut total = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            let row = &cos[i * classes..(i + 1) * classes];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            total += -(row[l].exp() / z).ln();
        }
        total / labels.len() as f64
    }

    #[test]
    fn margin_free_case_is_plain_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cos: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = [0, 2, 1, 1];
        let mut g = Graph::new();
        let c = g.constant(Tensor::new(vec![4, 3], cos.clone()).unwrap());
        let l = g.angular_margin_ce(c, &labels, AngularMargin { m: 1, lambda: 0.0, scale: 1.0 }).unwrap();
        assert!((g.value(l).item() - cross_entropy(&cos, 3, &labels)).abs() < 1e-10);
        assert!(g.angular_margin_ce(c, &labels, AngularMargin { m: 0, lambda: 0.0, scale: 1.0 }).is_err());
    }

    #[test]
    fn loss_falls_as_target_angle_closes() {
        let margin = AngularMargin { m: 2, lambda: 5.0, scale: 1.0 };
        let mut prev = f64::INFINITY;
        for i in 0..10 {
            let c = -0.9 + 0.2 * i as f64;
            let mut g = Graph::new();
            let cos = g.constant(Tensor::new(vec![1, 3], vec![c, 0.1, -0.2]).unwrap());
            let l = g.angular_margin_ce(cos, &[0], margin).unwrap();
            let v = g.value(l).item();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn full_head_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::from_fn(vec![5, 4], |_| rng.random_range(-1.0..1.0));
        let w = Tensor::from_fn(vec![3, 4], |_| rng.random_range(-1.0..1.0));
        let labels = [0, 1, 2, 1, 0];
        for (m, lambda) in [(1, 0.0), (2, 0.0), (2, 3.0), (3, 1.0)] {
            let margin = AngularMargin { m, lambda, scale: 4.0 };
            let report = gradcheck::check_inputs(&[x.clone(), w.clone()], 1e-6, |g, v| {
                let cos = g.cosine_matrix(v[0], v[1])?;
                g.angular_margin_ce(cos, &labels, margin)
            })
            .unwrap();
            assert!(report.passed(), "m={m} lambda={lambda} {report:?}");
        }
    }
}
