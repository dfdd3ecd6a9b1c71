//! Encoder-decoder network: strided frequency downsampling, residual blocks
//! at the bottleneck, nearest-neighbour upsampling, Swish throughout.
//!
//! Time resolution is never reduced; temporal context comes from the kernel
//! widths and a time dilation on the resampling convolutions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ForwardOpts;
use crate::audio::N_MELS;
use crate::autodiff::{Conv2dSpec, Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv2d};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdnConfig {
    pub channels: usize,
    /// Frequency-halving stages (mirrored by as many upsampling stages).
    pub down_stages: usize,
    pub res_blocks: usize,
    /// `(frequency, time)` kernel of the input convolution.
    pub in_kernel: (usize, usize),
    /// `(frequency, time)` kernel of the mask-producing convolution.
    pub out_kernel: (usize, usize),
    /// Time dilation of the 3x3 resampling convolutions.
    pub resample_time_dilation: usize,
    pub n_bands: usize,
}

impl Default for EdnConfig {
    fn default() -> Self {
        EdnConfig {
            channels: 90,
            down_stages: 2,
            res_blocks: 6,
            in_kernel: (7, 7),
            out_kernel: (7, 9),
            resample_time_dilation: 2,
            n_bands: N_MELS,
        }
    }
}

impl EdnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("edn: {msg}")));
        if self.channels == 0 || self.resample_time_dilation == 0 {
            return bad("channels and dilation must be positive".into());
        }
        let odd = |k: (usize, usize)| k.0 % 2 == 1 && k.1 % 2 == 1;
        if !odd(self.in_kernel) || !odd(self.out_kernel) {
            return bad("kernels must be odd".into());
        }
        let factor = 1usize << self.down_stages;
        if self.n_bands == 0 || self.n_bands % factor != 0 {
            return bad(format!(
                "{} bands cannot be restored after {} halvings",
                self.n_bands, self.down_stages
            ));
        }
        Ok(())
    }

    /// Analytic temporal context in frames.
    pub fn context_frames(&self) -> usize {
        let resample = 2 * self.down_stages * 2 * self.resample_time_dilation;
        1 + (self.in_kernel.1 - 1) + resample + self.res_blocks * 2 * 2 + (self.out_kernel.1 - 1)
    }
}

#[derive(Clone, Debug)]
struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        spec: Conv2dSpec,
        rng: &mut impl Rng,
    ) -> Self {
        ConvBn {
            conv: Conv2d::new(store, &format!("{name}.conv"), in_ch, out_ch, kernel, spec, false, rng),
            bn: BatchNorm::new(store, &format!("{name}.bn"), out_ch),
        }
    }

    fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var, opts: ForwardOpts) -> Result<Var> {
        let y = self.conv.forward(g, store, x)?;
        self.bn.forward(g, store, y, opts.mode)
    }
}

#[derive(Clone, Debug)]
pub struct Edn {
    config: EdnConfig,
    input_norm: BatchNorm,
    stem: ConvBn,
    down: Vec<ConvBn>,
    blocks: Vec<(ConvBn, ConvBn)>,
    up: Vec<ConvBn>,
    head: Conv2d,
}

impl Edn {
    pub fn new<S: Scalar>(config: &EdnConfig, store: &mut ParamStore<S>, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let dt = config.resample_time_dilation;
        let input_norm = BatchNorm::new(store, "input_bn", 1);
        let stem = ConvBn::new(store, "stem", 1, c, config.in_kernel, Conv2dSpec::same(config.in_kernel, (1, 1)), rng);
        let down = (0..config.down_stages)
            .map(|i| {
                let spec = Conv2dSpec {
                    stride: (2, 1),
                    dilation: (1, dt),
                    padding: (1, dt),
                };
                ConvBn::new(store, &format!("down{}", i + 1), c, c, (3, 3), spec, rng)
            })
            .collect();
        let same3 = Conv2dSpec::same((3, 3), (1, 1));
        let blocks = (0..config.res_blocks)
            .map(|i| {
                let name = format!("res{}", i + 1);
                (
                    ConvBn::new(store, &format!("{name}.a"), c, c, (3, 3), same3, rng),
                    ConvBn::new(store, &format!("{name}.b"), c, c, (3, 3), same3, rng),
                )
            })
            .collect();
        let up = (0..config.down_stages)
            .map(|i| {
                let spec = Conv2dSpec::same((3, 3), (1, dt));
                ConvBn::new(store, &format!("up{}", i + 1), c, c, (3, 3), spec, rng)
            })
            .collect();
        let head = Conv2d::zeros(store, "head", c, 1, config.out_kernel, Conv2dSpec::same(config.out_kernel, (1, 1)));
        Ok(Edn {
            config: config.clone(),
            input_norm,
            stem,
            down,
            blocks,
            up,
            head,
        })
    }

    pub fn config(&self) -> &EdnConfig {
        &self.config
    }

    /// Mask logits `[N, 1, F, T]` for unnormalized log features `x`.
    pub fn logits<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var, opts: ForwardOpts) -> Result<Var> {
        let h = self.input_norm.forward(g, store, x, opts.mode)?;
        let h = self.stem.forward(g, store, h, opts)?;
        let skip = g.swish(h);
        let mut h = skip;
        for stage in &self.down {
            let y = stage.forward(g, store, h, opts)?;
            h = g.swish(y);
        }
        for (a, b) in &self.blocks {
            let y = a.forward(g, store, h, opts)?;
            let y = g.swish(y);
            let y = b.forward(g, store, y, opts)?;
            let y = g.add(y, h)?;
            h = g.swish(y);
        }
        for stage in &self.up {
            let y = g.upsample_nearest(h, (2, 1))?;
            let y = stage.forward(g, store, y, opts)?;
            h = g.swish(y);
        }
        let h = g.add(h, skip)?;
        self.head.forward(g, store, h)
    }
}
