//! Colored noise, chord music and multi-talker babble.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use super::derive_seed;
use super::speaker::{normalize_level, synth_utterance, SpeakerModel};
use crate::audio::{AudioBuffer, SAMPLE_RATE};
use crate::error::{Error, Result};

const NOISE_RMS: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Noise,
    Music,
    Babble,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::Noise, NoiseKind::Music, NoiseKind::Babble];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Noise => "noise",
            NoiseKind::Music => "music",
            NoiseKind::Babble => "babble",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(NoiseKind::Noise),
            "music" => Ok(NoiseKind::Music),
            "babble" => Ok(NoiseKind::Babble),
            other => Err(Error::Invalid(format!("unknown noise kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub duration_s: f64,
    pub seed: u64,
    /// Long-term spectral slope of `Noise`, in dB per octave.
    pub slope_db_per_octave: f64,
    /// Number of talkers in `Babble`.
    pub talkers: usize,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, duration_s: f64, seed: u64) -> Self {
        NoiseSpec {
            kind,
            duration_s,
            seed,
            slope_db_per_octave: -3.0,
            talkers: 6,
        }
    }
}

pub fn gen_noise(spec: &NoiseSpec) -> Result<AudioBuffer> {
    if !(spec.duration_s > 0.0) {
        return Err(Error::Invalid("noise duration must be positive".into()));
    }
    let n = (spec.duration_s * SAMPLE_RATE as f64).round() as usize;
    let mut samples = match spec.kind {
        NoiseKind::Noise => colored(n, spec.slope_db_per_octave, spec.seed)?,
        NoiseKind::Music => music(n, spec.seed),
        NoiseKind::Babble => babble(spec)?,
    };
    normalize_level(&mut samples, NOISE_RMS);
    AudioBuffer::new(samples, SAMPLE_RATE)
}

fn colored(n: usize, slope: f64, seed: u64) -> Result<Vec<f64>> {
    if !(slope.abs() <= 6.0) {
        return Err(Error::Invalid(format!("noise slope {slope} dB/octave outside [-6, 6]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf: Vec<Complex64> = (0..n).map(|_| Complex64::new(StandardNormal.sample(&mut rng), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let sr = SAMPLE_RATE as f64;
    for (k, b) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        let hz = (bin as f64 * sr / n as f64).max(50.0);
        *b *= 10f64.powf(slope * (hz / 1000.0).log2() / 20.0);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    Ok(buf.iter().map(|c| c.re).collect())
}

fn music(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = SAMPLE_RATE as f64;
    let mut out = vec![0.0; n];
    // Major and minor triads over a random root.
    let mut start = 0;
    while start < n {
        let len = (rng.random_range(0.4..1.0) * sr) as usize;
        let root = rng.random_range(48..72) as f64;
        let third = if rng.random_bool(0.5) { 4.0 } else { 3.0 };
        let mut notes = vec![root, root + third, root + 7.0, root - 12.0];
        if rng.random_bool(0.5) {
            notes.push(root + 12.0);
        }
        let decay = rng.random_range(0.3..1.0);
        for midi in notes {
            let f0 = 440.0 * 2f64.powf((midi - 69.0) / 12.0);
            let amp = rng.random_range(0.5..1.0);
            let phase0 = rng.random_range(0.0..std::f64::consts::TAU);
            for h in 1..=8 {
                let f = f0 * h as f64;
                if f >= sr / 2.0 - 200.0 {
                    break;
                }
                let a = amp / (h as f64).powf(1.2);
                let w = std::f64::consts::TAU * f / sr;
                for i in 0..len.min(n - start) {
                    let t = i as f64 / sr;
                    let env = (t / 0.01).min(1.0) * (-t / decay).exp();
                    out[start + i] += a * env * (w * i as f64 + phase0 * h as f64).sin();
                }
            }
        }
        start += len;
    }
    out
}

/// Speakers used for babble: fresh voices derived from the noise seed, never
/// part of a corpus inventory.
pub fn babble_talkers(seed: u64, count: usize) -> Vec<SpeakerModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "babble-talkers", 0));
    (0..count).map(|i| SpeakerModel::random(format!("babble-{seed:016x}-{i}"), &mut rng)).collect()
}

fn babble(spec: &NoiseSpec) -> Result<Vec<f64>> {
    if spec.talkers < 6 {
        return Err(Error::Invalid(format!("babble needs at least 6 talkers, got {}", spec.talkers)));
    }
    let dur = spec.duration_s.max(1.0);
    let n = (spec.duration_s * SAMPLE_RATE as f64).round() as usize;
    let mut out = vec![0.0; n];
    for (i, talker) in babble_talkers(spec.seed, spec.talkers).iter().enumerate() {
        let voice = synth_utterance(talker, dur, derive_seed(spec.seed, "babble-utt", i as u64))?;
        for (o, v) in out.iter_mut().zip(voice.samples()) {
            *o += v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{power, stft, StftConfig};

    fn octave_slope(a: &AudioBuffer) -> f64 {
        let s = stft(a, &StftConfig::default()).unwrap();
        let hz_per_bin = 16000.0 / 512.0;
        let band = |lo: f64| {
            let (a, b) = ((lo / hz_per_bin) as usize, (2.0 * lo / hz_per_bin) as usize);
            let mut e = 0.0;
            for t in 0..s.n_frames() {
                e += s.frame(t)[a..b].iter().map(|c| c.norm_sqr()).sum::<f64>() / (b - a) as f64;
            }
            10.0 * e.log10()
        };
        let levels: Vec<f64> = [250.0, 500.0, 1000.0, 2000.0].iter().map(|&f| band(f)).collect();
        (levels[3] - levels[0]) / 3.0
    }

    #[test]
    fn colored_noise_follows_the_configured_slope() {
        for slope in [-6.0, -3.0, 0.0, 4.5] {
            let mut spec = NoiseSpec::new(NoiseKind::Noise, 4.0, 11);
            spec.slope_db_per_octave = slope;
            let measured = octave_slope(&gen_noise(&spec).unwrap());
            assert!((measured - slope).abs() < 1.0, "slope {slope}: measured {measured}");
        }
        let mut spec = NoiseSpec::new(NoiseKind::Noise, 1.0, 1);
        spec.slope_db_per_octave = 9.0;
        assert!(gen_noise(&spec).is_err());
    }

    #[test]
    fn every_kind_is_deterministic_and_audible() {
        for kind in NoiseKind::ALL {
            let a = gen_noise(&NoiseSpec::new(kind, 1.5, 4)).unwrap();
            assert_eq!(a.len(), 24000);
            assert_eq!(a.samples(), gen_noise(&NoiseSpec::new(kind, 1.5, 4)).unwrap().samples());
            assert_ne!(a.samples(), gen_noise(&NoiseSpec::new(kind, 1.5, 5)).unwrap().samples());
            assert!(power(a.samples()) > 1e-4);
            assert!(a.samples().iter().all(|v| v.abs() <= 0.99));
            assert_eq!(kind.name().parse::<NoiseKind>().unwrap(), kind);
        }
    }

    #[test]
    fn babble_needs_six_talkers() {
        let mut spec = NoiseSpec::new(NoiseKind::Babble, 1.0, 3);
        spec.talkers = 5;
        assert!(gen_noise(&spec).is_err());
        assert_eq!(babble_talkers(3, 6).len(), 6);
    }
}
