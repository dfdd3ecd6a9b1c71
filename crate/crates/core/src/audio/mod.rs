//! Audio ingestion, short-time spectra, log-Mel features and SNR mixing.

mod features;
mod mel;
mod mix;
mod stft;
mod wav;

pub use features::{mean_normalize, Domain, FeatureMatrix};
pub use mel::{logmel, MelFilterbank};
pub use mix::{fit_length, mix_at_snr, mix_gain, power, snr_db};
pub use stft::{stft, Spectrogram, StftConfig};
pub use wav::{read_wav, write_wav, wav_bytes};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const SAMPLE_RATE: u32 = 16_000;
pub const N_MELS: usize = 40;
pub const POWER_FLOOR: f64 = 1e-10;

/// Mono audio with samples nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Invalid("audio buffer is empty".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Invalid("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Invalid("audio contains non-finite samples".into()));
        }
        Ok(AudioBuffer { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn scaled(&self, k: f64) -> Self {
        AudioBuffer {
            samples: self.samples.iter().map(|s| s * k).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Front-end settings for log-Mel extraction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontEndConfig {
    pub stft: StftConfig,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub power_floor: f64,
}

impl Default for FrontEndConfig {
    fn default() -> Self {
        FrontEndConfig {
            stft: StftConfig::default(),
            n_mels: N_MELS,
            f_min: 20.0,
            f_max: 7600.0,
            power_floor: POWER_FLOOR,
        }
    }
}

/// STFT plus Mel filterbank, built once and reused across utterances.
#[derive(Clone, Debug)]
pub struct FrontEnd {
    pub config: FrontEndConfig,
    pub filterbank: MelFilterbank,
}

impl FrontEnd {
    pub fn new(config: FrontEndConfig) -> Result<Self> {
        let filterbank = MelFilterbank::new(
            config.n_mels,
            config.stft.n_fft,
            config.stft.sample_rate,
            config.f_min,
            config.f_max,
        )?;
        Ok(FrontEnd { config, filterbank })
    }

    pub fn features<S: Scalar>(&self, audio: &AudioBuffer) -> Result<FeatureMatrix<S>> {
        if audio.sample_rate() != self.config.stft.sample_rate {
            return Err(Error::Invalid(format!(
                "audio at {} Hz, front end expects {} Hz",
                audio.sample_rate(),
                self.config.stft.sample_rate
            )));
        }
        let spec = stft(audio, &self.config.stft)?;
        Ok(logmel(&spec, &self.filterbank, self.config.power_floor)?.cast())
    }
}
