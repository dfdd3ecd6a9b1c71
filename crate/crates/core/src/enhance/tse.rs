//! Squeeze-excitation over time: one gate per (channel, frequency) cell.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{shape_err, Result};
use crate::nn::Linear;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TseMode {
    /// Gates from the time-averaged map, shared by every frame.
    #[default]
    Broadcast,
    /// Gates computed independently for each frame.
    PerFrame,
}

#[derive(Clone, Debug)]
pub struct TseBlock {
    channels: usize,
    bands: usize,
    mode: TseMode,
    squeeze: Linear,
    excite: Linear,
}

impl TseBlock {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        channels: usize,
        bands: usize,
        reduction: usize,
        mode: TseMode,
        rng: &mut impl Rng,
    ) -> Self {
        let width = channels * bands;
        let hidden = (width / reduction.max(1)).max(1);
        TseBlock {
            channels,
            bands,
            mode,
            squeeze: Linear::new(store, &format!("{name}.squeeze"), width, hidden, rng),
            excite: Linear::new(store, &format!("{name}.excite"), hidden, width, rng),
        }
    }

    fn gates<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, d: Var) -> Result<Var> {
        let h = self.squeeze.forward(g, store, d)?;
        let h = g.relu(h);
        let e = self.excite.forward(g, store, h)?;
        Ok(g.sigmoid(e))
    }

    /// Gate `x: [N, C, F, T]`. With `hold_context`, the time-pooled
    /// descriptor is treated as a constant so sensitivity stays local.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var, hold_context: bool) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != self.channels || s[2] != self.bands {
            return Err(shape_err!(
                "tse expects [N, {}, {}, T], got {:?}",
                self.channels,
                self.bands,
                s
            ));
        }
        let (n, t) = (s[0], s[3]);
        let width = self.channels * self.bands;
        match self.mode {
            TseMode::Broadcast => {
                let mut d = g.mean_last(x);
                if hold_context {
                    d = g.detach(d);
                }
                let d = g.reshape(d, vec![n, width])?;
                let gates = self.gates(g, store, d)?;
                let gates = g.reshape(gates, vec![n, self.channels, self.bands, 1])?;
                g.mul_last(x, gates)
            }
            TseMode::PerFrame => {
                let flat = g.reshape(x, vec![n, width, t])?;
                let frames = g.transpose_last2(flat)?;
                let frames = g.reshape(frames, vec![n * t, width])?;
                let gates = self.gates(g, store, frames)?;
                let gates = g.reshape(gates, vec![n, t, width])?;
                let gates = g.transpose_last2(gates)?;
                let gates = g.reshape(gates, s)?;
                g.mul(x, gates)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradcheck, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block(mode: TseMode) -> (ParamStore<f64>, TseBlock) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = TseBlock::new(&mut store, "tse", 2, 3, 2, mode, &mut rng);
        (store, b)
    }

    #[test]
    fn gates_lie_in_unit_interval_and_shape_is_kept() {
        for mode in [TseMode::Broadcast, TseMode::PerFrame] {
            let (store, b) = block(mode);
            let mut g = Graph::new();
            let x = g.constant(Tensor::full(vec![2, 2, 3, 5], 1.0));
            let y = b.forward(&mut g, &store, x, false).unwrap();
            assert_eq!(g.shape(y), &[2, 2, 3, 5]);
            assert!(g.value(y).data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn broadcast_gates_are_constant_along_time() {
        let (store, b) = block(TseMode::Broadcast);
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(vec![1, 2, 3, 4], 2.0));
        let y = b.forward(&mut g, &store, x, false).unwrap();
        for row in g.value(y).data().chunks(4) {
            assert!(row.iter().all(|&v| v == row[0]));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for mode in [TseMode::Broadcast, TseMode::PerFrame] {
            let (mut store, b) = block(mode);
            let x = Tensor::from_fn(vec![2, 2, 3, 4], |i| ((i * 7 % 13) as f64 - 6.0) * 0.2);
            let xr = x.clone();
            let report = gradcheck::check_params(&mut store, 1e-6, |g, st| {
                let xv = g.constant(xr.clone());
                let y = b.forward(g, st, xv, false)?;
                let y = g.mul(y, y)?;
                Ok(g.sum(y))
            })
            .unwrap();
            assert!(report.passed(), "{mode:?} params {report:?}");
            let report = gradcheck::check_inputs(&[x], 1e-6, |g, v| {
                let y = b.forward(g, &store, v[0], false)?;
                let y = g.mul(y, y)?;
                Ok(g.sum(y))
            })
            .unwrap();
            assert!(report.passed(), "{mode:?} inputs {report:?}");
        }
    }
}
