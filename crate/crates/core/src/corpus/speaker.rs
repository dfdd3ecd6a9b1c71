//! Source-filter voice synthesis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::audio::{AudioBuffer, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Loudness every synthesized utterance is normalized to.
pub const TARGET_RMS: f64 = 0.03;
pub const MAX_PEAK: f64 = 0.99;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerModel {
    pub id: String,
    pub pitch_hz: f64,
    /// Relative spread of per-syllable pitch.
    pub jitter: f64,
    pub formants: [f64; 3],
    pub bandwidths: [f64; 3],
    /// One-pole source low-pass coefficient (spectral tilt).
    pub tilt: f64,
    /// Aspiration noise relative to the pulse train.
    pub breath: f64,
    /// Centre of the fricative noise bursts.
    pub frication_hz: f64,
}

impl SpeakerModel {
    pub fn random(id: impl Into<String>, rng: &mut impl Rng) -> Self {
        let f1 = rng.random_range(300.0..850.0);
        let f2 = rng.random_range((f1 + 400.0f64).max(1000.0)..2400.0);
        let f3 = rng.random_range((f2 + 300.0f64).max(2300.0)..3600.0);
        SpeakerModel {
            id: id.into(),
            pitch_hz: rng.random_range(80.0..260.0),
            jitter: rng.random_range(0.04..0.12),
            formants: [f1, f2, f3],
            bandwidths: [
                rng.random_range(50.0..120.0),
                rng.random_range(70.0..160.0),
                rng.random_range(100.0..250.0),
            ],
            tilt: rng.random_range(0.6..0.95),
            breath: rng.random_range(0.01..0.08),
            frication_hz: rng.random_range(3500.0..6500.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.formants;
        if !(70.0..=300.0).contains(&self.pitch_hz) || !(f[0] < f[1] && f[1] < f[2]) || f[0] <= 0.0 {
            return Err(Error::Invalid(format!("speaker {}: implausible pitch or formants", self.id)));
        }
        if f[2] >= SAMPLE_RATE as f64 / 2.0 || self.bandwidths.iter().any(|&b| b <= 0.0) {
            return Err(Error::Invalid(format!("speaker {}: formants outside the band", self.id)));
        }
        Ok(())
    }
}

/// Two-pole resonator.
#[derive(Clone, Copy, Default)]
struct Resonator {
    a1: f64,
    a2: f64,
    b0: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    /// Unit gain at DC, as in a cascade formant synthesizer.
    fn tune(&mut self, freq: f64, bw: f64, sr: f64) {
        let r = (-PI * bw / sr).exp();
        let theta = 2.0 * PI * freq / sr;
        self.a1 = 2.0 * r * theta.cos();
        self.a2 = -r * r;
        self.b0 = 1.0 - self.a1 - self.a2;
    }

    /// Roughly unit gain at the centre frequency.
    fn tune_peak(&mut self, freq: f64, bw: f64, sr: f64) {
        self.tune(freq, bw, sr);
        let r = (-PI * bw / sr).exp();
        self.b0 = (1.0 - r) * (1.0 - r * r).sqrt();
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Scale to [`TARGET_RMS`], then further down if the peak exceeds [`MAX_PEAK`].
pub fn normalize_level(samples: &mut [f64], rms: f64) {
    let p = (samples.iter().map(|v| v * v).sum::<f64>() / samples.len().max(1) as f64).sqrt();
    if p > 0.0 {
        let g = rms / p;
        samples.iter_mut().for_each(|v| *v *= g);
    }
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > MAX_PEAK {
        let g = MAX_PEAK / peak;
        samples.iter_mut().for_each(|v| *v *= g);
    }
}

fn raw_voice(speaker: &SpeakerModel, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let mut out = vec![0.0; n];
    let mut res = [Resonator::default(); 3];
    let mut fric = Resonator::default();
    fric.tune_peak(speaker.frication_hz, 900.0, sr);
    let mut tilt_state = 0.0;
    let mut phase = 0.0;
    let mut pos = (rng.random_range(0.0..0.15) * sr) as usize;
    while pos < n {
        let len = (rng.random_range(0.12..0.32) * sr) as usize;
        let gap = (rng.random_range(0.02..0.12) * sr) as usize;
        if rng.random_bool(0.3) {
            let burst = (rng.random_range(0.04..0.08) * sr) as usize;
            let amp = rng.random_range(0.2..0.6);
            for i in 0..burst.min(n - pos) {
                let env = (PI * i as f64 / burst as f64).sin();
                let x: f64 = StandardNormal.sample(rng);
                out[pos + i] += 4.0 * amp * env * fric.step(x);
            }
            pos += burst;
            if pos >= n {
                break;
            }
        }
        for (r, (&f, &b)) in res.iter_mut().zip(speaker.formants.iter().zip(&speaker.bandwidths)) {
            r.tune(f * (1.0 + rng.random_range(-0.12..0.12)), b, sr);
        }
        let f0_start = speaker.pitch_hz * (1.0 + speaker.jitter * rng.random_range(-1.0..1.0));
        let f0_end = f0_start * (1.0 + rng.random_range(-0.08..0.08));
        let amp = rng.random_range(0.5..1.0);
        let ramp = (0.02 * sr) as usize;
        for i in 0..len.min(n - pos) {
            let frac = i as f64 / len as f64;
            let f0 = (f0_start + (f0_end - f0_start) * frac) * (1.0 + 0.005 * rng.random_range(-1.0..1.0));
            phase += f0 / sr;
            let mut x = 0.0;
            if phase >= 1.0 {
                phase -= 1.0;
                x = 1.0;
            }
            let noise: f64 = StandardNormal.sample(rng);
            x += speaker.breath * noise;
            tilt_state = x + speaker.tilt * tilt_state;
            let mut y = tilt_state;
            for r in res.iter_mut() {
                y = r.step(y);
            }
            let env = if i < ramp {
                i as f64 / ramp as f64
            } else if len - i < ramp {
                (len - i) as f64 / ramp as f64
            } else {
                1.0
            };
            out[pos + i] += amp * env * y;
        }
        pos += len + gap;
    }
    out
}

/// Utterance of `duration_s` seconds, deterministic in `(speaker, seed)`.
pub fn synth_utterance(speaker: &SpeakerModel, duration_s: f64, seed: u64) -> Result<AudioBuffer> {
    if !(duration_s >= 1.0) {
        return Err(Error::Invalid(format!("utterances must last at least 1 s, got {duration_s}")));
    }
    speaker.validate()?;
    let n = (duration_s * SAMPLE_RATE as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = raw_voice(speaker, n, &mut rng);
    normalize_level(&mut samples, TARGET_RMS);
    AudioBuffer::new(samples, SAMPLE_RATE)
}
