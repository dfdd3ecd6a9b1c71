//! Synthetic speakers, noise and parallel clean/noisy corpora.

mod build;
mod manifest;
mod noise;
mod speaker;

pub use build::{
    build_parallel_corpus, build_parallel_corpus_with, speakers, store_content_addressed, CorpusConfig, CorpusSummary,
    AUDIO_DIR, MANIFEST_FILE,
};
pub use manifest::{Manifest, ManifestRow, NoiseInfo, Split, HEADER};
pub use noise::{babble_talkers, gen_noise, NoiseKind, NoiseSpec};
pub use speaker::{normalize_level, synth_utterance, SpeakerModel, MAX_PEAK, TARGET_RMS};

use sha2::{Digest, Sha256};

/// Independent seed for the `index`-th draw of stream `tag` under `base`.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}
