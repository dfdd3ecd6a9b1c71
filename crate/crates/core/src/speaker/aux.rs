//! Residual speaker classifier with LDE pooling and an angular-margin head.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::angular::AngularMargin;
use super::lde::Lde;
use crate::audio::{mean_normalize, FeatureMatrix, N_MELS};
use crate::autodiff::{Checkpoint, CheckpointHeader, Conv2dSpec, Graph, Mode, OptimizerState, ParamId, ParamStore, Var};
use crate::error::{shape_err, Error, Result};
use crate::nn::{he_normal, BatchNorm, Conv2d, Linear};
use crate::scalar::Scalar;

pub const CHECKPOINT_KIND: &str = "aux";

/// Number of activation taps exposed to the deep feature loss.
pub const N_TAPS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuxNetConfig {
    pub stem_channels: usize,
    /// Channel width of each residual stage.
    pub widths: Vec<usize>,
    pub blocks_per_stage: usize,
    /// `(frequency, time)` stride of the first block of each stage.
    pub strides: Vec<(usize, usize)>,
    pub lde_components: usize,
    pub embed_dim: usize,
    pub n_speakers: usize,
    pub margin: u32,
    pub n_bands: usize,
}

impl Default for AuxNetConfig {
    fn default() -> Self {
        AuxNetConfig {
            stem_channels: 16,
            widths: vec![16, 32, 64, 128],
            blocks_per_stage: 2,
            strides: vec![(1, 1), (2, 1), (2, 2), (2, 2)],
            lde_components: 16,
            embed_dim: 128,
            n_speakers: 20,
            margin: 2,
            n_bands: N_MELS,
        }
    }
}

fn strided(n: usize, s: usize) -> usize {
    (n - 1) / s + 1
}

impl AuxNetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("aux net: {msg}")));
        if self.widths.len() + 2 != N_TAPS {
            return bad(format!("{} stages give {} taps, need {N_TAPS}", self.widths.len(), self.widths.len() + 2));
        }
        if self.strides.len() != self.widths.len() || self.strides.iter().any(|&(a, b)| a == 0 || b == 0) {
            return bad("one positive stride pair per stage required".into());
        }
        if self.stem_channels == 0 || self.widths.contains(&0) || self.blocks_per_stage == 0 {
            return bad("widths and block counts must be positive".into());
        }
        if self.lde_components == 0 || self.embed_dim == 0 {
            return bad("LDE components and embedding size must be positive".into());
        }
        if self.n_speakers < 2 {
            return bad(format!("{} speakers; need at least 2", self.n_speakers));
        }
        if self.margin < 1 {
            return bad("margin must be at least 1".into());
        }
        Ok(())
    }

    /// Frequency bins left after the trunk.
    pub fn trunk_bands(&self) -> usize {
        self.strides.iter().fold(self.n_bands, |f, &(s, _)| strided(f, s))
    }

    /// Frames left after the trunk for an input of `t` frames.
    pub fn trunk_frames(&self, t: usize) -> usize {
        self.strides.iter().fold(t, |n, &(_, s)| strided(n, s))
    }

    /// Dimension of the frame descriptors fed to the pooling layer.
    pub fn descriptor_dim(&self) -> usize {
        self.widths.last().copied().unwrap_or(0) * self.trunk_bands()
    }

    pub fn tap_names(&self) -> Vec<String> {
        let mut names = vec!["stem".to_string()];
        names.extend((1..=self.widths.len()).map(|i| format!("stage{i}")));
        names.push("embedding".into());
        names
    }
}

#[derive(Clone, Debug)]
struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    shortcut: Option<(Conv2d, BatchNorm)>,
}

impl BasicBlock {
    fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        stride: (usize, usize),
        rng: &mut impl Rng,
    ) -> Self {
        let first = Conv2dSpec {
            stride,
            dilation: (1, 1),
            padding: (1, 1),
        };
        let same = Conv2dSpec::same((3, 3), (1, 1));
        let shortcut = (in_ch != out_ch || stride != (1, 1)).then(|| {
            let spec = Conv2dSpec {
                stride,
                ..Conv2dSpec::default()
            };
            (
                Conv2d::new(store, &format!("{name}.proj"), in_ch, out_ch, (1, 1), spec, false, rng),
                BatchNorm::new(store, &format!("{name}.proj_bn"), out_ch),
            )
        });
        BasicBlock {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), in_ch, out_ch, (3, 3), first, false, rng),
            bn1: BatchNorm::new(store, &format!("{name}.bn1"), out_ch),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), out_ch, out_ch, (3, 3), same, false, rng),
            bn2: BatchNorm::new(store, &format!("{name}.bn2"), out_ch),
            shortcut,
        }
    }

    fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var, mode: Mode) -> Result<Var> {
        let y = self.conv1.forward(g, store, x)?;
        let y = self.bn1.forward(g, store, y, mode)?;
        let y = g.relu(y);
        let y = self.conv2.forward(g, store, y)?;
        let y = self.bn2.forward(g, store, y, mode)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(g, store, x)?;
                bn.forward(g, store, s, mode)?
            }
            None => x,
        };
        let y = g.add(y, skip)?;
        Ok(g.relu(y))
    }
}

#[derive(Clone, Debug)]
struct AuxNet {
    stem: Conv2d,
    stem_bn: BatchNorm,
    stages: Vec<Vec<BasicBlock>>,
    pool: Lde,
    embed: Linear,
    head: ParamId,
}

/// Activations of one forward pass.
#[derive(Clone, Debug)]
pub struct AuxOutput {
    /// The [`N_TAPS`] tap activations, shallow to deep.
    pub taps: Vec<Var>,
    /// `[N, embed_dim]`, the last tap.
    pub embedding: Var,
}

/// Auxiliary speaker network with its parameters.
#[derive(Clone, Debug)]
pub struct AuxModel<S: Scalar> {
    config: AuxNetConfig,
    net: AuxNet,
    pub store: ParamStore<S>,
}

impl<S: Scalar> AuxModel<S> {
    pub fn build(config: &AuxNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let stem = Conv2d::new(
            &mut store,
            "stem.conv",
            1,
            config.stem_channels,
            (3, 3),
            Conv2dSpec::same((3, 3), (1, 1)),
            false,
            &mut rng,
        );
        let stem_bn = BatchNorm::new(&mut store, "stem.bn", config.stem_channels);
        let mut in_ch = config.stem_channels;
        let mut stages = Vec::new();
        for (i, (&w, &stride)) in config.widths.iter().zip(&config.strides).enumerate() {
            let blocks = (0..config.blocks_per_stage)
                .map(|b| {
                    let s = if b == 0 { stride } else { (1, 1) };
                    let blk = BasicBlock::new(&mut store, &format!("stage{}.block{}", i + 1, b + 1), in_ch, w, s, &mut rng);
                    in_ch = w;
                    blk
                })
                .collect();
            stages.push(blocks);
        }
        let d = config.descriptor_dim();
        let pool = Lde::new(&mut store, "lde", config.lde_components, d, &mut rng);
        let embed = Linear::new(&mut store, "embedding", config.lde_components * d, config.embed_dim, &mut rng);
        let head = store.add("head.weight", he_normal(vec![config.n_speakers, config.embed_dim], config.embed_dim, &mut rng));
        Ok(AuxModel {
            config: config.clone(),
            net: AuxNet {
                stem,
                stem_bn,
                stages,
                pool,
                embed,
                head,
            },
            store,
        })
    }

    pub fn config(&self) -> &AuxNetConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.store.num_trainable()
    }

    /// Taps and embedding for mean-normalized features `x: [N, 1, F, T]`.
    pub fn forward(&self, g: &mut Graph<S>, x: Var, mode: Mode) -> Result<AuxOutput> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != 1 || s[2] != self.config.n_bands {
            return Err(shape_err!("aux net expects [N, 1, {}, T], got {:?}", self.config.n_bands, s));
        }
        let (store, net) = (&self.store, &self.net);
        let mut taps = Vec::with_capacity(N_TAPS);
        let h = net.stem.forward(g, store, x)?;
        let h = net.stem_bn.forward(g, store, h, mode)?;
        let mut h = g.relu(h);
        taps.push(h);
        for stage in &net.stages {
            for block in stage {
                h = block.forward(g, store, h, mode)?;
            }
            taps.push(h);
        }
        let hs = g.shape(h).to_vec();
        let (n, c, f, t) = (hs[0], hs[1], hs[2], hs[3]);
        let frames = g.reshape(h, vec![n, c * f, t])?;
        let frames = g.transpose_last2(frames)?;
        let pooled = net.pool.forward(g, store, frames)?;
        let embedding = net.embed.forward(g, store, pooled)?;
        taps.push(embedding);
        Ok(AuxOutput { taps, embedding })
    }

    /// Angular-margin classification loss of a batch of embeddings.
    pub fn loss(&self, g: &mut Graph<S>, embedding: Var, labels: &[usize], lambda: f64, scale: f64) -> Result<Var> {
        let w = g.param(&self.store, self.net.head);
        let cos = g.cosine_matrix(embedding, w)?;
        g.angular_margin_ce(
            cos,
            labels,
            AngularMargin {
                m: self.config.margin,
                lambda,
                scale,
            },
        )
    }

    /// Predicted class of each embedding row: the closest head direction.
    pub fn classify(&self, g: &mut Graph<S>, embedding: Var) -> Result<Vec<usize>> {
        let w = g.constant(self.store.entry(self.net.head).value.clone());
        let cos = g.cosine_matrix(embedding, w)?;
        let k = self.config.n_speakers;
        Ok(g
            .value(cos)
            .data()
            .chunks(k)
            .map(|row| (0..k).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap_or(Ordering::Equal)).unwrap_or(0))
            .collect())
    }

    /// Eval-mode tap activations for one feature matrix, which must already
    /// be mean-normalized.
    pub fn tap_activations(&self, g: &mut Graph<S>, x: Var) -> Result<Vec<Var>> {
        Ok(self.forward(g, x, Mode::Eval)?.taps)
    }

    /// Embedding of raw log features (normalized here).
    pub fn embed(&self, features: &FeatureMatrix<S>) -> Result<Vec<S>> {
        let normed = mean_normalize(features)?;
        let mut g = Graph::new();
        let x = g.constant(normed.to_tensor());
        let out = self.forward(&mut g, x, Mode::Eval)?;
        Ok(g.value(out.embedding).data().to_vec())
    }

    pub fn checkpoint(&self, optimizer: Option<&OptimizerState<S>>, meta: serde_json::Value) -> Result<Checkpoint> {
        let header = CheckpointHeader {
            kind: CHECKPOINT_KIND.into(),
            config: serde_json::to_value(&self.config)?,
            taps: self.config.tap_names(),
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
        let config: AuxNetConfig = serde_json::from_value(ckpt.header.config.clone())?;
        if ckpt.header.taps != config.tap_names() {
            return Err(Error::Checkpoint(format!("unexpected tap layers {:?}", ckpt.header.taps)));
        }
        let mut m = Self::build(&config, 0)?;
        ckpt.load_into(&mut m.store)?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::Domain;
    use crate::autodiff::Tensor;

    pub(crate) fn tiny() -> AuxNetConfig {
        AuxNetConfig {
            stem_channels: 2,
            widths: vec![2, 3, 3, 4],
            blocks_per_stage: 1,
            lde_components: 2,
            embed_dim: 5,
            n_speakers: 3,
            ..AuxNetConfig::default()
        }
    }

    #[test]
    fn shapes_and_tap_count() {
        let cfg = AuxNetConfig::default();
        let m = AuxModel::<f32>::build(&cfg, 1).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(vec![2, 1, 40, 200], |i| ((i % 23) as f32) * 0.1 - 1.0));
        let out = m.forward(&mut g, x, Mode::Train).unwrap();
        assert_eq!(out.taps.len(), N_TAPS);
        assert_eq!(g.shape(out.embedding), &[2, cfg.embed_dim]);
        assert_eq!(g.shape(out.taps[4]), &[2, 128, cfg.trunk_bands(), cfg.trunk_frames(200)]);
        let w = g.constant(m.store.entry(m.net.head).value.clone());
        let cos = g.cosine_matrix(out.embedding, w).unwrap();
        assert_eq!(g.shape(cos), &[2, cfg.n_speakers]);
        eprintln!("aux parameters: {}", m.num_params());
    }

    #[test]
    fn eval_embedding_is_deterministic_and_nonzero() {
        let m = AuxModel::<f64>::build(&tiny(), 3).unwrap();
        let f = FeatureMatrix::new(40, 30, (0..1200).map(|i| ((i * 7 % 19) as f64) * 0.2).collect(), Domain::Log).unwrap();
        let a = m.embed(&f).unwrap();
        assert_eq!(a, m.embed(&f).unwrap());
        assert_eq!(a.len(), 5);
        assert!(a.iter().all(|v| v.is_finite()) && a.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = tiny();
        c.widths.pop();
        c.strides.pop();
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.n_speakers = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn checkpoint_records_taps() {
        let m = AuxModel::<f32>::build(&tiny(), 3).unwrap();
        let ck = m.checkpoint(None, serde_json::Value::Null).unwrap();
        assert_eq!(ck.header.taps, vec!["stem", "stage1", "stage2", "stage3", "stage4", "embedding"]);
        let back = AuxModel::<f32>::from_checkpoint(&ck).unwrap();
        assert_eq!(back.config(), m.config());
    }
}
