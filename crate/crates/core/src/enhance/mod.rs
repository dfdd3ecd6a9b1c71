//! Mask-estimating enhancement networks over log-Mel features.
//!
//! Both architectures emit one logit per time-frequency cell. The logit `z`
//! becomes a linear-domain gain `m = 2 sigmoid(z)`, floored at
//! [`MASK_FLOOR`], and the enhanced features are `F + ln m`. A zero logit
//! is the identity mask, so a freshly built network passes features through
//! unchanged.

pub mod can;
pub mod edn;
pub mod probe;
pub mod tse;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{Domain, FeatureMatrix};
use crate::autodiff::graph::sigmoid;
use crate::autodiff::{Checkpoint, CheckpointHeader, Graph, Mode, OptimizerState, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use can::{Can, CanConfig};
pub use edn::{Edn, EdnConfig};
pub use probe::receptive_field;
pub use tse::{TseBlock, TseMode};

pub const MASK_FLOOR: f64 = 1e-6;

pub const CHECKPOINT_KIND: &str = "enhancer";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOpts {
    pub mode: Mode,
    /// Treat time-pooled TSE descriptors as constants.
    pub hold_context: bool,
}

impl Default for ForwardOpts {
    fn default() -> Self {
        ForwardOpts {
            mode: Mode::Eval,
            hold_context: false,
        }
    }
}

impl ForwardOpts {
    pub fn train() -> Self {
        ForwardOpts {
            mode: Mode::Train,
            hold_context: false,
        }
    }
}

impl<S: Scalar> Graph<S> {
    /// `ln(max(2 sigmoid(z), floor))` elementwise.
    pub fn log_mask(&mut self, z: Var, floor: S) -> Var {
        let two = S::lit(2.0);
        let value = self.value(z).map(|v| (two * sigmoid(v)).max(floor).ln());
        self.push(
            value,
            vec![z],
            Box::new(move |c| {
                let g = c
                    .inputs[0]
                    .data()
                    .iter()
                    .zip(c.grad)
                    .map(|(&v, &g)| {
                        let s = sigmoid(v);
                        if two * s > floor {
                            g * (S::one() - s)
                        } else {
                            S::zero()
                        }
                    })
                    .collect();
                vec![Some(g)]
            }),
        )
    }
}

/// `noisy + ln(mask)`, the log-domain application of a multiplicative mask.
pub fn apply_mask<S: Scalar>(noisy: &FeatureMatrix<S>, mask: &[S]) -> Result<FeatureMatrix<S>> {
    if noisy.domain() != Domain::Log {
        return Err(Error::Invalid("masks apply to log-domain features".into()));
    }
    if mask.len() != noisy.values().len() || mask.iter().any(|&m| !(m > S::zero())) {
        return Err(Error::Invalid("mask must be positive and match the feature size".into()));
    }
    let values = noisy.values().iter().zip(mask).map(|(&f, &m)| f + m.ln()).collect();
    FeatureMatrix::new(noisy.n_bands(), noisy.n_frames(), values, Domain::Log)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum EnhancerConfig {
    Can(CanConfig),
    Edn(EdnConfig),
}

impl EnhancerConfig {
    pub fn n_bands(&self) -> usize {
        match self {
            EnhancerConfig::Can(c) => c.n_bands,
            EnhancerConfig::Edn(c) => c.n_bands,
        }
    }

    pub fn context_frames(&self) -> usize {
        match self {
            EnhancerConfig::Can(c) => c.context_frames(),
            EnhancerConfig::Edn(c) => c.context_frames(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnhancerConfig::Can(_) => "can",
            EnhancerConfig::Edn(_) => "edn",
        }
    }
}

#[derive(Clone, Debug)]
enum Net {
    Can(Can),
    Edn(Edn),
}

/// An enhancement network together with its parameters.
#[derive(Clone, Debug)]
pub struct Enhancer<S: Scalar> {
    config: EnhancerConfig,
    net: Net,
    pub store: ParamStore<S>,
}

impl<S: Scalar> Enhancer<S> {
    pub fn build(config: &EnhancerConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = match config {
            EnhancerConfig::Can(c) => Net::Can(Can::new(c, &mut store, &mut rng)?),
            EnhancerConfig::Edn(c) => Net::Edn(Edn::new(c, &mut store, &mut rng)?),
        };
        Ok(Enhancer {
            config: config.clone(),
            net,
            store,
        })
    }

    pub fn config(&self) -> &EnhancerConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.store.num_trainable()
    }

    /// Mask logits `[N, 1, F, T]`.
    pub fn logits(&self, g: &mut Graph<S>, x: Var, opts: ForwardOpts) -> Result<Var> {
        self.logits_with(g, &self.store, x, opts)
    }

    /// As [`Enhancer::logits`] but reading parameters from `store`, which
    /// must have been built for the same architecture.
    pub fn logits_with(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var, opts: ForwardOpts) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 4 || s[1] != 1 || s[2] != self.config.n_bands() {
            return Err(crate::error::shape_err!(
                "enhancer expects [N, 1, {}, T], got {:?}",
                self.config.n_bands(),
                s
            ));
        }
        if !g.value(x).is_finite() {
            return Err(Error::Invalid("enhancer input contains non-finite values".into()));
        }
        match &self.net {
            Net::Can(n) => n.logits(g, store, x, opts),
            Net::Edn(n) => n.logits(g, store, x, opts),
        }
    }

    /// Enhanced log features `x + ln(mask)`.
    pub fn forward(&self, g: &mut Graph<S>, x: Var, opts: ForwardOpts) -> Result<Var> {
        self.forward_with(g, &self.store, x, opts)
    }

    pub fn forward_with(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var, opts: ForwardOpts) -> Result<Var> {
        let z = self.logits_with(g, store, x, opts)?;
        let lm = g.log_mask(z, S::lit(MASK_FLOOR));
        g.add(x, lm)
    }

    /// Eval-mode enhancement of one utterance.
    pub fn enhance(&self, noisy: &FeatureMatrix<S>) -> Result<FeatureMatrix<S>> {
        if noisy.domain() != Domain::Log {
            return Err(Error::Invalid("enhancer expects log-domain features".into()));
        }
        let mut g = Graph::new();
        let x = g.constant(noisy.to_tensor());
        let y = self.forward(&mut g, x, ForwardOpts::default())?;
        FeatureMatrix::from_tensor(g.value(y), Domain::Log)
    }

    /// Linear-domain mask the network applies to `noisy`.
    pub fn mask(&self, noisy: &FeatureMatrix<S>) -> Result<Vec<S>> {
        let mut g = Graph::new();
        let x = g.constant(noisy.to_tensor());
        let z = self.logits(&mut g, x, ForwardOpts::default())?;
        let floor = S::lit(MASK_FLOOR);
        Ok(g.value(z).data().iter().map(|&v| (S::lit(2.0) * sigmoid(v)).max(floor)).collect())
    }

    pub fn checkpoint(&self, optimizer: Option<&OptimizerState<S>>, meta: serde_json::Value) -> Result<Checkpoint> {
        let header = CheckpointHeader {
            kind: CHECKPOINT_KIND.into(),
            config: serde_json::to_value(&self.config)?,
            taps: Vec::new(),
            optimizer: None,
            meta,
        };
        Ok(Checkpoint::from_store(header, &self.store, optimizer))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.header.kind != CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!(
                "expected an {CHECKPOINT_KIND} checkpoint, found {:?}",
                ckpt.header.kind
            )));
        }
        let config: EnhancerConfig = serde_json::from_value(ckpt.header.config.clone())?;
        let mut e = Self::build(&config, 0)?;
        ckpt.load_into(&mut e.store)?;
        Ok(e)
    }

    /// Temporal receptive field measured by [`receptive_field`].
    pub fn receptive_field(&self) -> Result<usize> {
        receptive_field(self)
    }
}

/// Helper for tests and probes: a `[1, 1, F, T]` tensor from a closure.
pub fn feature_tensor<S: Scalar>(bands: usize, frames: usize, f: impl FnMut(usize) -> S) -> Tensor<S> {
    Tensor::from_fn(vec![1, 1, bands, frames], f)
}
