use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{AudioBuffer, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub win_ms: f64,
    pub hop_ms: f64,
    pub n_fft: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            sample_rate: SAMPLE_RATE,
            win_ms: 25.0,
            hop_ms: 10.0,
            n_fft: 512,
        }
    }
}

impl StftConfig {
    pub fn win_len(&self) -> usize {
        (self.win_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.hop_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frames produced for `n` samples, or `None` if shorter than a window.
    pub fn n_frames(&self, n: usize) -> Option<usize> {
        let win = self.win_len();
        (n >= win).then(|| 1 + (n - win) / self.hop_len())
    }

    /// Samples needed to produce exactly `frames` frames.
    pub fn samples_for(&self, frames: usize) -> usize {
        self.win_len() + (frames.max(1) - 1) * self.hop_len()
    }

    /// Periodic Hann window of the analysis length.
    pub fn window(&self) -> Vec<f64> {
        let n = self.win_len();
        (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect()
    }
}

/// Complex short-time spectrum, `n_bins x n_frames`.
#[derive(Clone, Debug)]
pub struct Spectrogram {
    n_bins: usize,
    n_frames: usize,
    // frame-major: frame t occupies [t * n_bins, (t + 1) * n_bins)
    data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn bin(&self, k: usize, t: usize) -> Complex64 {
        self.data[t * self.n_bins + k]
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }
}

pub fn stft(audio: &AudioBuffer, cfg: &StftConfig) -> Result<Spectrogram> {
    let win = cfg.win_len();
    if cfg.n_fft < win || cfg.hop_len() == 0 {
        return Err(Error::Config(format!(
            "n_fft {} must cover the {}-sample window and hop must be positive",
            cfg.n_fft, win
        )));
    }
    let n_frames = cfg.n_frames(audio.len()).ok_or_else(|| {
        Error::Invalid(format!("audio of {} samples is shorter than one {win}-sample window", audio.len()))
    })?;
    let window = cfg.window();
    let hop = cfg.hop_len();
    let n_bins = cfg.n_bins();
    let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.n_fft];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut data = Vec::with_capacity(n_frames * n_bins);
    let x = audio.samples();
    for t in 0..n_frames {
        let start = t * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < win {
                Complex64::new(x[start + i] * window[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        data.extend_from_slice(&buf[..n_bins]);
    }
    Ok(Spectrogram {
        n_bins,
        n_frames,
        data,
    })
}
