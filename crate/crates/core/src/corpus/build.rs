//! Parallel clean/noisy corpus construction.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::derive_seed;
use super::manifest::{Manifest, ManifestRow, NoiseInfo, Split};
use super::noise::{gen_noise, NoiseKind, NoiseSpec};
use super::speaker::{synth_utterance, SpeakerModel, MAX_PEAK};
use crate::audio::{mix_at_snr, snr_db, wav_bytes, AudioBuffer};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const AUDIO_DIR: &str = "audio";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub utt_seconds: f64,
    /// Fraction of each speaker's utterances used for training; the rest validate.
    pub train_fraction: f64,
    /// Noisy copies per training or validation utterance.
    pub noisy_copies: usize,
    pub train_snr_range: (f64, f64),
    pub train_noise_kinds: Vec<NoiseKind>,
    pub test_utts_per_speaker: usize,
    pub test_seconds: f64,
    pub test_snrs: Vec<f64>,
    pub test_noise_kinds: Vec<NoiseKind>,
    pub noise_slope_range: (f64, f64),
    pub babble_talkers: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_speakers: 20,
            utts_per_speaker: 30,
            utt_seconds: 6.0,
            train_fraction: 0.9,
            noisy_copies: 1,
            train_snr_range: (-5.0, 20.0),
            train_noise_kinds: NoiseKind::ALL.to_vec(),
            test_utts_per_speaker: 8,
            test_seconds: 3.0,
            test_snrs: vec![-5.0, 0.0, 5.0, 10.0, 15.0],
            test_noise_kinds: NoiseKind::ALL.to_vec(),
            noise_slope_range: (-6.0, 3.0),
            babble_talkers: 6,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("corpus: {m}")));
        if self.n_speakers < 2 {
            return bad("need at least 2 speakers");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie strictly between 0 and 1");
        }
        let n_train = self.train_count();
        if n_train == 0 || n_train == self.utts_per_speaker {
            return bad("split leaves the training or validation side empty");
        }
        if self.test_snrs.is_empty() || self.test_noise_kinds.is_empty() || self.train_noise_kinds.is_empty() {
            return bad("SNR grid and noise kinds must be non-empty");
        }
        let (lo, hi) = self.train_snr_range;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() || self.test_snrs.iter().any(|s| !s.is_finite()) {
            return bad("SNRs must be finite with lo <= hi");
        }
        let (a, b) = self.noise_slope_range;
        if !(a <= b && a >= -6.0 && b <= 6.0) {
            return bad("noise slope range must lie within [-6, 6] dB/octave");
        }
        if self.utt_seconds < 1.0 || self.test_seconds < 1.0 {
            return bad("utterances must last at least 1 s");
        }
        if self.test_utts_per_speaker < 2 {
            return bad("need at least 2 test utterances per speaker");
        }
        if self.babble_talkers < 6 {
            return bad("babble needs at least 6 talkers");
        }
        Ok(())
    }

    pub fn train_count(&self) -> usize {
        (self.utts_per_speaker as f64 * self.train_fraction).round() as usize
    }

    pub fn n_test_conditions(&self) -> usize {
        self.test_snrs.len() * self.test_noise_kinds.len()
    }
}

pub fn speakers(n: usize, seed: u64) -> Vec<SpeakerModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "speakers", 0));
    (0..n).map(|i| SpeakerModel::random(format!("spk{i:02}"), &mut rng)).collect()
}

fn snr_tag(snr: f64) -> String {
    let sign = if snr < 0.0 { 'm' } else { 'p' };
    format!("{sign}{}", snr.abs()).replace('.', "_")
}

/// Mix and verify the achieved SNR from the actual residual.
fn noisy_copy(clean: &AudioBuffer, noise: &AudioBuffer, snr: f64, id: &str) -> Result<AudioBuffer> {
    let mix = mix_at_snr(clean, noise, snr)?;
    let residual: Vec<f64> = mix.samples().iter().zip(clean.samples()).map(|(m, c)| m - c).collect();
    let measured = snr_db(clean.samples(), &residual);
    if (measured - snr).abs() > 1e-6 {
        return Err(Error::Invalid(format!("{id}: measured SNR {measured} dB, requested {snr} dB")));
    }
    if mix.samples().iter().any(|v| v.abs() > MAX_PEAK) {
        return Err(Error::Invalid(format!("{id}: mixture clips at {snr} dB SNR")));
    }
    Ok(mix)
}

fn noise_for(cfg: &CorpusConfig, kind: NoiseKind, seconds: f64, seed: u64) -> Result<AudioBuffer> {
    let mut spec = NoiseSpec::new(kind, seconds, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "slope", 0));
    let (a, b) = cfg.noise_slope_range;
    spec.slope_db_per_octave = if a < b { rng.random_range(a..b) } else { a };
    spec.talkers = cfg.babble_talkers;
    gen_noise(&spec)
}

/// Generate the corpus, handing each utterance to `sink` as soon as it
/// exists; `sink` returns the path recorded in the manifest.
pub fn build_parallel_corpus_with(
    cfg: &CorpusConfig,
    seed: u64,
    mut sink: impl FnMut(&ManifestRow, &AudioBuffer) -> Result<PathBuf>,
) -> Result<Manifest> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut emit = |mut row: ManifestRow, audio: &AudioBuffer| -> Result<()> {
        row.path = sink(&row, audio)?;
        rows.push(row);
        Ok(())
    };
    let n_train = cfg.train_count();
    let mut noise_index = 0u64;
    for (s, sp) in speakers(cfg.n_speakers, seed).iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "train-conditions", s as u64));
        for u in 0..cfg.utts_per_speaker {
            let split = if u < n_train { Split::Train } else { Split::Val };
            let id = format!("{}-u{u:03}", sp.id);
            let clean = synth_utterance(sp, cfg.utt_seconds, derive_seed(seed, "train-utt", (s * 10_000 + u) as u64))?;
            emit(ManifestRow { utt_id: id.clone(), path: PathBuf::new(), speaker_id: sp.id.clone(), split, noise: None }, &clean)?;
            for j in 0..cfg.noisy_copies {
                let kind = cfg.train_noise_kinds[rng.random_range(0..cfg.train_noise_kinds.len())];
                let (lo, hi) = cfg.train_snr_range;
                let snr = if lo < hi { rng.random_range(lo..hi) } else { lo };
                let noise_seed = derive_seed(seed, "train-noise", noise_index);
                noise_index += 1;
                let nid = format!("{id}-n{j}");
                let noise = noise_for(cfg, kind, cfg.utt_seconds, noise_seed)?;
                let mix = noisy_copy(&clean, &noise, snr, &nid)?;
                let info = NoiseInfo { kind, snr_db: snr, clean_utt_id: id.clone(), noise_seed };
                emit(ManifestRow { utt_id: nid, path: PathBuf::new(), speaker_id: sp.id.clone(), split, noise: Some(info) }, &mix)?;
            }
        }
    }
    let mut noise_index = 0u64;
    for (s, sp) in speakers(cfg.n_speakers, seed).iter().enumerate() {
        for u in 0..cfg.test_utts_per_speaker {
            let id = format!("{}-t{u:03}", sp.id);
            let clean = synth_utterance(sp, cfg.test_seconds, derive_seed(seed, "test-utt", (s * 10_000 + u) as u64))?;
            emit(ManifestRow { utt_id: id.clone(), path: PathBuf::new(), speaker_id: sp.id.clone(), split: Split::Test, noise: None }, &clean)?;
            for &kind in &cfg.test_noise_kinds {
                let noise_seed = derive_seed(seed, "test-noise", noise_index);
                noise_index += 1;
                let noise = noise_for(cfg, kind, cfg.test_seconds, noise_seed)?;
                for &snr in &cfg.test_snrs {
                    let nid = format!("{id}-{kind}-{}", snr_tag(snr));
                    let mix = noisy_copy(&clean, &noise, snr, &nid)?;
                    let info = NoiseInfo { kind, snr_db: snr, clean_utt_id: id.clone(), noise_seed };
                    emit(ManifestRow { utt_id: nid, path: PathBuf::new(), speaker_id: sp.id.clone(), split: Split::Test, noise: Some(info) }, &mix)?;
                }
            }
        }
    }
    let manifest = Manifest { rows };
    manifest.validate()?;
    Ok(manifest)
}

/// Write `audio` as `audio/<sha256>.wav` under `root` unless it already exists.
pub fn store_content_addressed(root: &Path, audio: &AudioBuffer) -> Result<PathBuf> {
    let bytes = wav_bytes(audio)?;
    let rel = Path::new(AUDIO_DIR).join(format!("{}.wav", hex::encode(Sha256::digest(&bytes))));
    let path = root.join(&rel);
    if !path.is_file() {
        let dir = root.join(AUDIO_DIR);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let tmp = path.with_extension("wav.tmp");
        std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    }
    Ok(rel)
}

/// Build the corpus under `root`: content-addressed WAVs plus `manifest.tsv`.
/// Rerunning with the same config and seed leaves every file untouched.
pub fn build_parallel_corpus(cfg: &CorpusConfig, seed: u64, root: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let manifest = build_parallel_corpus_with(cfg, seed, |_, audio| store_content_addressed(root, audio))?;
    let path = root.join(MANIFEST_FILE);
    let text = manifest.to_tsv();
    if std::fs::read_to_string(&path).ok().as_deref() != Some(text.as_str()) {
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusSummary {
    pub speakers: usize,
    pub clean_hours: f64,
    pub train_rows: usize,
    pub val_rows: usize,
    pub test_rows: usize,
    pub test_conditions: usize,
}

impl CorpusSummary {
    pub fn of(cfg: &CorpusConfig, manifest: &Manifest) -> Self {
        let count = |s: Split| manifest.split(s).count();
        let clean_train = manifest.rows.iter().filter(|r| r.is_clean() && r.split != Split::Test).count();
        CorpusSummary {
            speakers: manifest.speakers().len(),
            clean_hours: clean_train as f64 * cfg.utt_seconds / 3600.0,
            train_rows: count(Split::Train),
            val_rows: count(Split::Val),
            test_rows: count(Split::Test),
            test_conditions: cfg.n_test_conditions(),
        }
    }
}
