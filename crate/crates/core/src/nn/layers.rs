//! Parameterized building blocks shared by the enhancement and speaker networks.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::graph::StatUpdate;
use crate::autodiff::{Conv2dSpec, Graph, Mode, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;
use crate::scalar::Scalar;

/// He-normal initialization for a fan-in of `fan_in`.
pub fn he_normal<S: Scalar>(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Tensor<S> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape, |_| S::lit(dist.sample(rng)))
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: Conv2dSpec,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        spec: Conv2dSpec,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_ch * kernel.0 * kernel.1;
        let weight = store.add(
            format!("{name}.weight"),
            he_normal(vec![out_ch, in_ch, kernel.0, kernel.1], fan_in, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(vec![out_ch])));
        Conv2d { weight, bias, spec }
    }

    /// Same as [`Conv2d::new`] but with all-zero weights.
    pub fn zeros<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        spec: Conv2dSpec,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), Tensor::zeros(vec![out_ch, in_ch, kernel.0, kernel.1]));
        let bias = Some(store.add(format!("{name}.bias"), Tensor::zeros(vec![out_ch])));
        Conv2d { weight, bias, spec }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let y = g.conv2d(x, w, self.spec)?;
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add_channel_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(vec![channels], S::one())),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(vec![channels])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(vec![channels])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::full(vec![channels], S::one())),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var, mode: Mode) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        match mode {
            Mode::Train => {
                let (y, batch_mean, batch_var) = g.batch_norm_train(x, gamma, beta)?;
                g.record_stats(StatUpdate {
                    store: store.id(),
                    mean: self.running_mean,
                    var: self.running_var,
                    batch_mean,
                    batch_var,
                });
                Ok(y)
            }
            Mode::Eval => {
                let mean = store.entry(self.running_mean).value.data();
                let var = store.entry(self.running_var).value.data();
                g.batch_norm_eval(x, gamma, beta, mean, var)
            }
        }
    }
}

/// `a * BN(x) + b * x` with learnable scalars `a` and `b`.
#[derive(Clone, Debug)]
pub struct AdaptiveBatchNorm {
    pub bn: BatchNorm,
    pub a: ParamId,
    pub b: ParamId,
}

impl AdaptiveBatchNorm {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, channels: usize) -> Self {
        AdaptiveBatchNorm {
            bn: BatchNorm::new(store, &format!("{name}.bn"), channels),
            a: store.add(format!("{name}.a"), Tensor::full(vec![1], S::one())),
            b: store.add(format!("{name}.b"), Tensor::zeros(vec![1])),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var, mode: Mode) -> Result<Var> {
        let normed = self.bn.forward(g, store, x, mode)?;
        let a = g.param(store, self.a);
        let b = g.param(store, self.b);
        let left = g.scale_by(normed, a)?;
        let right = g.scale_by(x, b)?;
        g.add(left, right)
    }
}

/// `x W + b` for `x: [N, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Linear {
            weight: store.add(format!("{name}.weight"), he_normal(vec![inputs, outputs], inputs, rng)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![outputs])),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w)?;
        g.add_row_bias(y, b)
    }
}
