//! Context aggregation network: a stack of 3x3 convolutions whose time and
//! frequency dilation grows by one per layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tse::{TseBlock, TseMode};
use super::ForwardOpts;
use crate::audio::N_MELS;
use crate::autodiff::{Conv2dSpec, Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::nn::{AdaptiveBatchNorm, BatchNorm, Conv2d};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CanConfig {
    pub n_layers: usize,
    pub channels: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    /// 1-based layers followed by a TSE block.
    pub tse_positions: Vec<usize>,
    pub tse_reduction: usize,
    pub tse_mode: TseMode,
    pub leaky_slope: f64,
    pub n_bands: usize,
}

impl Default for CanConfig {
    fn default() -> Self {
        CanConfig {
            n_layers: 8,
            channels: 45,
            kernel: 3,
            dilations: (1..=8).collect(),
            tse_positions: vec![2, 5, 8],
            tse_reduction: 8,
            tse_mode: TseMode::Broadcast,
            leaky_slope: 0.2,
            n_bands: N_MELS,
        }
    }
}

impl CanConfig {
    /// Same layout with `n_layers` layers of `channels` channels.
    pub fn scaled(n_layers: usize, channels: usize) -> Self {
        let tse_positions = match n_layers {
            0 => vec![],
            1 | 2 => vec![n_layers],
            n => {
                let gap = (n - 1) / 2;
                (0..3).map(|i| n - (2 - i) * gap).collect()
            }
        };
        CanConfig {
            n_layers,
            channels,
            dilations: (1..=n_layers).collect(),
            tse_positions,
            ..CanConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("can: {msg}")));
        if self.n_layers == 0 || self.channels == 0 || self.n_bands == 0 {
            return bad("layers, channels and bands must be positive".into());
        }
        if self.kernel % 2 == 0 {
            return bad(format!("kernel {} must be odd", self.kernel));
        }
        if self.dilations.len() != self.n_layers
            || self.dilations.first() != Some(&1)
            || self.dilations.windows(2).any(|w| w[1] <= w[0])
        {
            return bad(format!(
                "dilations {:?} must increase strictly from 1 over {} layers",
                self.dilations, self.n_layers
            ));
        }
        let p = &self.tse_positions;
        if p.iter().any(|&i| i == 0 || i > self.n_layers) || p.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!("tse positions {p:?} must be increasing layer indices in 1..={}", self.n_layers));
        }
        if p.windows(3).any(|w| w[2] - w[1] != w[1] - w[0]) {
            return bad(format!("tse positions {p:?} are not uniformly spaced"));
        }
        Ok(())
    }

    /// Analytic temporal context, `1 + (k - 1) * sum(d)` frames.
    pub fn context_frames(&self) -> usize {
        1 + (self.kernel - 1) * self.dilations.iter().sum::<usize>()
    }
}

#[derive(Clone, Debug)]
struct CanLayer {
    conv: Conv2d,
    norm: AdaptiveBatchNorm,
    residual: bool,
    tse: Option<TseBlock>,
}

#[derive(Clone, Debug)]
pub struct Can {
    config: CanConfig,
    input_norm: BatchNorm,
    layers: Vec<CanLayer>,
    head: Conv2d,
}

impl Can {
    pub fn new<S: Scalar>(config: &CanConfig, store: &mut ParamStore<S>, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let k = config.kernel;
        let input_norm = BatchNorm::new(store, "input_bn", 1);
        let layers = config
            .dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let name = format!("layer{}", i + 1);
                let in_ch = if i == 0 { 1 } else { c };
                let spec = Conv2dSpec::same((k, k), (d, d));
                CanLayer {
                    conv: Conv2d::new(store, &format!("{name}.conv"), in_ch, c, (k, k), spec, true, rng),
                    norm: AdaptiveBatchNorm::new(store, &format!("{name}.abn"), c),
                    residual: in_ch == c,
                    tse: config.tse_positions.contains(&(i + 1)).then(|| {
                        TseBlock::new(
                            store,
                            &format!("{name}.tse"),
                            c,
                            config.n_bands,
                            config.tse_reduction,
                            config.tse_mode,
                            rng,
                        )
                    }),
                }
            })
            .collect();
        let head = Conv2d::zeros(store, "head", c, 1, (1, 1), Conv2dSpec::default());
        Ok(Can {
            config: config.clone(),
            input_norm,
            layers,
            head,
        })
    }

    pub fn config(&self) -> &CanConfig {
        &self.config
    }

    /// Mask logits `[N, 1, F, T]` for unnormalized log features `x`.
    pub fn logits<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var, opts: ForwardOpts) -> Result<Var> {
        let slope = S::lit(self.config.leaky_slope);
        let mut h = self.input_norm.forward(g, store, x, opts.mode)?;
        for layer in &self.layers {
            let y = layer.conv.forward(g, store, h)?;
            let y = layer.norm.forward(g, store, y, opts.mode)?;
            let mut y = g.leaky_relu(y, slope);
            if layer.residual {
                y = g.add(y, h)?;
            }
            if let Some(tse) = &layer.tse {
                y = tse.forward(g, store, y, opts.hold_context)?;
            }
            h = y;
        }
        self.head.forward(g, store, h)
    }
}
