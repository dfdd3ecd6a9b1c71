use super::AudioBuffer;
use crate::error::{Error, Result};

/// Mean square of a signal.
pub fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

pub fn snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    10.0 * (power(signal) / power(noise)).log10()
}

/// Gain that brings noise of power `p_noise` to `snr_db` below `p_clean`.
pub fn mix_gain(p_clean: f64, p_noise: f64, snr_db: f64) -> f64 {
    (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// `len` samples of `noise` starting at `offset`, looping as needed.
pub fn fit_length(noise: &AudioBuffer, len: usize, offset: usize) -> AudioBuffer {
    let src = noise.samples();
    let samples = (0..len).map(|i| src[(offset + i) % src.len()]).collect();
    AudioBuffer::new(samples, noise.sample_rate()).expect("non-empty source")
}

/// `clean + g * noise`, with the noise looped or cropped to the clean length
/// and `g` chosen so the mixture has exactly the requested SNR.
pub fn mix_at_snr(clean: &AudioBuffer, noise: &AudioBuffer, snr_db: f64) -> Result<AudioBuffer> {
    if clean.sample_rate() != noise.sample_rate() {
        return Err(Error::Invalid(format!(
            "sample rates differ: {} vs {}",
            clean.sample_rate(),
            noise.sample_rate()
        )));
    }
    if snr_db.is_nan() {
        return Err(Error::Invalid("SNR is NaN".into()));
    }
    let noise = fit_length(noise, clean.len(), 0);
    let (pc, pn) = (power(clean.samples()), power(noise.samples()));
    if pc <= 0.0 || pn <= 0.0 {
        return Err(Error::Invalid("clean and noise must both have nonzero power".into()));
    }
    let g = mix_gain(pc, pn, snr_db);
    let samples = clean.samples().iter().zip(noise.samples()).map(|(c, n)| c + g * n).collect();
    AudioBuffer::new(samples, clean.sample_rate())
}
