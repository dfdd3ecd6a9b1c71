// A run configuration small enough to go end to end in seconds.

use std::path::Path;

use dfl_core::corpus::{CorpusConfig, NoiseKind};
use dfl_core::enhance::CanConfig;
use dfl_core::pipeline::{NetKind, Precision, RunConfig};
use dfl_core::speaker::AuxNetConfig;
use dfl_core::train::{AuxTrainConfig, EnhancerTrainConfig};

pub fn config(out: &Path, precision: Precision) -> RunConfig {
    let desk = RunConfig::desk();
    RunConfig {
        seed: 7,
        out: out.to_path_buf(),
        precision,
        eval_batch: 4,
        corpus: CorpusConfig {
            n_speakers: 3,
            utts_per_speaker: 4,
            utt_seconds: 1.5,
            train_fraction: 0.75,
            test_utts_per_speaker: 3,
            test_seconds: 1.0,
            test_snrs: vec![0.0, 10.0],
            test_noise_kinds: vec![NoiseKind::Babble, NoiseKind::Noise],
            ..CorpusConfig::default()
        },
        aux_net: AuxNetConfig {
            stem_channels: 2,
            widths: vec![2, 2, 4, 4],
            blocks_per_stage: 1,
            lde_components: 2,
            embed_dim: 8,
            n_speakers: 3,
            ..AuxNetConfig::default()
        },
        aux_train: AuxTrainConfig { epochs: 2, batch_size: 4, segment_frames: 60, warmup_steps: 2, ..AuxTrainConfig::default() },
        net: NetKind::Can,
        can: CanConfig::scaled(2, 3),
        enhancer_train: EnhancerTrainConfig { epochs: 2, batch_size: 4, segment_frames: 60, ..EnhancerTrainConfig::default() },
        ..desk
    }
}
