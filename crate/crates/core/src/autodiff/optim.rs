//! Adam and RAdam with per-parameter moment accumulators.

use serde::{Deserialize, Serialize};

use crate::autodiff::params::ParamStore;
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Radam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn radam() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Radam,
            ..Self::default()
        }
    }
}

/// Length of the approximated simple moving average used by RAdam at step
/// `t` (1-based).
pub fn radam_rho(beta2: f64, t: u64) -> f64 {
    let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    let b2t = beta2.powi(t as i32);
    rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t)
}

/// RAdam applies the adaptive (rectified) update only once the variance of
/// the adaptive learning rate is tractable.
pub const RADAM_RHO_THRESHOLD: f64 = 4.0;

#[derive(Clone, Debug)]
pub struct OptimizerState<S> {
    pub config: OptimizerConfig,
    pub step: u64,
    /// First and second moments, indexed like the store's entries; empty for
    /// buffers.
    pub first: Vec<Vec<S>>,
    pub second: Vec<Vec<S>>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(config: OptimizerConfig, store: &ParamStore<S>) -> Self {
        let moments = || {
            store
                .iter()
                .map(|(_, p)| if p.trainable { vec![S::zero(); p.value.len()] } else { Vec::new() })
                .collect::<Vec<_>>()
        };
        OptimizerState {
            config,
            step: 0,
            first: moments(),
            second: moments(),
        }
    }

    /// Apply one update with the gradients currently held by `store`.
    pub fn step(&mut self, store: &mut ParamStore<S>, lr: f64) {
        self.step += 1;
        let t = self.step;
        let c = self.config;
        let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
        let (one_b1, one_b2) = (S::one() - b1, S::one() - b2);
        let bc1 = 1.0 - c.beta1.powi(t as i32);
        let bc2 = 1.0 - c.beta2.powi(t as i32);
        let eps = S::lit(c.eps);

        // step = lr_eff * m / (sqrt(v / bc2) + eps), or lr_eff * m without
        // adaptation for the RAdam warm-up branch
        let (lr_eff, adaptive) = match c.kind {
            OptimizerKind::Adam => (lr / bc1, true),
            OptimizerKind::Radam => {
                let rho = radam_rho(c.beta2, t);
                if rho > RADAM_RHO_THRESHOLD {
                    let rho_inf = 2.0 / (1.0 - c.beta2) - 1.0;
                    let r = ((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho)).sqrt();
                    (lr * r / bc1, true)
                } else {
                    (lr / bc1, false)
                }
            }
        };
        let lr_eff = S::lit(lr_eff);
        let inv_bc2 = S::lit(1.0 / bc2);

        let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.trainable)).collect();
        for (i, (id, trainable)) in ids.into_iter().enumerate() {
            if !trainable {
                continue;
            }
            let p = store.entry_mut(id);
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for j in 0..value.len() {
                let g = grad[j];
                m[j] = b1 * m[j] + one_b1 * g;
                v[j] = b2 * v[j] + one_b2 * g * g;
                let update = if adaptive {
                    m[j] / ((v[j] * inv_bc2).sqrt() + eps)
                } else {
                    m[j]
                };
                value[j] -= lr_eff * update;
            }
        }
    }

    /// Moment tensors as named entries, for checkpointing.
    pub fn named_moments(&self, store: &ParamStore<S>) -> Vec<(String, Tensor<S>)> {
        let mut out = Vec::new();
        for (i, (_, p)) in store.iter().enumerate() {
            if !p.trainable {
                continue;
            }
            let shape = p.value.shape().to_vec();
            out.push((format!("opt.m.{}", p.name), Tensor::new(shape.clone(), self.first[i].clone()).unwrap()));
            out.push((format!("opt.v.{}", p.name), Tensor::new(shape, self.second[i].clone()).unwrap()));
        }
        out
    }

    pub fn restore_moments(&mut self, store: &ParamStore<S>, lookup: impl Fn(&str) -> Option<Tensor<S>>) -> Result<()> {
        for (i, (_, p)) in store.iter().enumerate() {
            if !p.trainable {
                continue;
            }
            for (prefix, slot) in [("opt.m.", &mut self.first[i]), ("opt.v.", &mut self.second[i])] {
                let name = format!("{prefix}{}", p.name);
                let t = lookup(&name).ok_or_else(|| Error::Checkpoint(format!("missing optimizer entry {name}")))?;
                if t.len() != slot.len() {
                    return Err(Error::Checkpoint(format!("optimizer entry {name} has wrong size")));
                }
                *slot = t.into_data();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::full(vec![1], value));
        s.entry_mut(id).grad = Tensor::full(vec![1], grad);
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        for cfg in [OptimizerConfig::default(), OptimizerConfig::radam()] {
            let mut s = single(0.7, 0.0);
            let mut opt = OptimizerState::new(cfg, &s);
            for _ in 0..10 {
                opt.step(&mut s, 0.01);
            }
            assert_eq!(s.entry(s.lookup("w").unwrap()).value.item(), 0.7);
        }
    }

    #[test]
    fn first_adam_step_matches_hand_formula() {
        let mut s = single(0.0, 1.0);
        let mut opt = OptimizerState::new(OptimizerConfig::default(), &s);
        opt.step(&mut s, 0.001);
        // m_hat = 1, v_hat = 1
        let expect = -0.001 / (1.0 + 1e-8);
        let got = s.entry(s.lookup("w").unwrap()).value.item();
        assert!((got - expect).abs() < 1e-15, "{got} vs {expect}");
    }

    #[test]
    fn radam_uses_momentum_branch_for_first_four_steps() {
        let rhos: Vec<f64> = (1..=6).map(|t| radam_rho(0.999, t)).collect();
        for (t, rho) in rhos.iter().enumerate() {
            assert_eq!(*rho > RADAM_RHO_THRESHOLD, t + 1 >= 5, "t={} rho={rho}", t + 1);
        }
        // Momentum branch: with a constant gradient g, m_hat = g so the update
        // is exactly lr * g, independent of the second moment.
        let mut s = single(0.0, 2.0);
        let mut opt = OptimizerState::new(OptimizerConfig::radam(), &s);
        for t in 1..=4 {
            opt.step(&mut s, 0.01);
            let got = s.entry(s.lookup("w").unwrap()).value.item();
            assert!((got + 0.02 * t as f64).abs() < 1e-12, "step {t}: {got}");
        }
        opt.step(&mut s, 0.01);
        let got = s.entry(s.lookup("w").unwrap()).value.item();
        let rho = radam_rho(0.999, 5);
        let rho_inf = 1999.0;
        let r = ((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho)).sqrt();
        let expect = -0.08 - 0.01 * r * 2.0 / (2.0 + 1e-8);
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn buffers_are_not_updated() {
        let mut s = ParamStore::<f64>::new();
        let b = s.add_buffer("running", Tensor::full(vec![2], 1.0));
        s.entry_mut(b).grad = Tensor::full(vec![2], 5.0);
        let mut opt = OptimizerState::new(OptimizerConfig::default(), &s);
        opt.step(&mut s, 0.1);
        assert_eq!(s.entry(b).value.data(), &[1.0, 1.0]);
    }
}
