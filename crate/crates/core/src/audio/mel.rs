use super::features::{Domain, FeatureMatrix};
use super::stft::Spectrogram;
use crate::error::{shape_err, Error, Result};

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters, equally spaced on the Mel scale, mapping `n_bins`
/// power-spectrum bins to `n_mels` bands.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank {
    n_mels: usize,
    n_bins: usize,
    f_min: f64,
    f_max: f64,
    // row-major n_mels x n_bins
    weights: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32, f_min: f64, f_max: f64) -> Result<Self> {
        let nyquist = sample_rate as f64 / 2.0;
        if n_mels == 0 || !(0.0..nyquist).contains(&f_min) || f_max <= f_min || f_max > nyquist {
            return Err(Error::Config(format!(
                "mel filterbank: {n_mels} bands over [{f_min}, {f_max}] Hz at {sample_rate} Hz"
            )));
        }
        let n_bins = n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| lo + (hi - lo) * i as f64 / (n_mels + 1) as f64)
            .collect();
        let mut weights = vec![0.0; n_mels * n_bins];
        for m in 0..n_mels {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..n_bins {
                let mel = hz_to_mel(k as f64 * sample_rate as f64 / n_fft as f64);
                let w = if mel > left && mel <= center {
                    (mel - left) / (center - left)
                } else if mel > center && mel < right {
                    (right - mel) / (right - center)
                } else {
                    0.0
                };
                weights[m * n_bins + k] = w;
            }
        }
        let fb = MelFilterbank {
            n_mels,
            n_bins,
            f_min,
            f_max,
            weights,
        };
        if let Some(m) = (0..n_mels).find(|&m| fb.row(m).iter().all(|&w| w == 0.0)) {
            return Err(Error::Config(format!(
                "mel band {m} covers no FFT bin; use a larger n_fft or fewer bands"
            )));
        }
        Ok(fb)
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn f_range(&self) -> (f64, f64) {
        (self.f_min, self.f_max)
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    /// Center frequency of band `m` in Hz.
    pub fn center_hz(&self, m: usize) -> f64 {
        let (lo, hi) = (hz_to_mel(self.f_min), hz_to_mel(self.f_max));
        mel_to_hz(lo + (hi - lo) * (m + 1) as f64 / (self.n_mels + 1) as f64)
    }

    /// Band energies of one power spectrum.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        (0..self.n_mels)
            .map(|m| self.row(m).iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }
}

/// `log(max(fb · |X|², floor))`, one column per frame.
pub fn logmel(spec: &Spectrogram, fb: &MelFilterbank, floor: f64) -> Result<FeatureMatrix<f64>> {
    if spec.n_bins() != fb.n_bins() {
        return Err(shape_err!(
            "spectrogram has {} bins, filterbank expects {}",
            spec.n_bins(),
            fb.n_bins()
        ));
    }
    let (f, t) = (fb.n_mels(), spec.n_frames());
    let mut values = vec![0.0; f * t];
    let mut power = vec![0.0; spec.n_bins()];
    for frame in 0..t {
        for (p, c) in power.iter_mut().zip(spec.frame(frame)) {
            *p = c.norm_sqr();
        }
        for (m, e) in fb.apply(&power).into_iter().enumerate() {
            values[m * t + frame] = e.max(floor).ln();
        }
    }
    FeatureMatrix::new(f, t, values, Domain::Log)
}

#[cfg(test)]
mod tests {
    use super::super::{stft, AudioBuffer, StftConfig};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn default_fb() -> MelFilterbank {
        MelFilterbank::new(40, 512, 16000, 20.0, 7600.0).unwrap()
    }

    #[test]
    fn filters_are_nonnegative_contiguous_and_cover_the_band() {
        let fb = default_fb();
        for m in 0..40 {
            let row = fb.row(m);
            assert!(row.iter().all(|&w| w >= 0.0));
            let nz: Vec<usize> = (0..row.len()).filter(|&k| row[k] > 0.0).collect();
            assert!(!nz.is_empty());
            assert_eq!(nz.last().unwrap() - nz[0] + 1, nz.len(), "band {m} support not contiguous");
        }
        for k in 0..fb.n_bins() {
            let hz = k as f64 * 16000.0 / 512.0;
            if hz > 20.0 && hz < 7600.0 {
                let total: f64 = (0..40).map(|m| fb.row(m)[k]).sum();
                assert!(total > 0.0, "bin {k} ({hz} Hz) uncovered");
            }
        }
    }

    fn noise(n: usize, seed: u64) -> AudioBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioBuffer::new((0..n).map(|_| rng.random_range(-0.5..0.5)).collect(), 16000).unwrap()
    }

    #[test]
    fn zero_spectrum_maps_to_log_floor() {
        let a = AudioBuffer::new(vec![0.0; 1600], 16000).unwrap();
        let s = stft(&a, &StftConfig::default()).unwrap();
        let f = logmel(&s, &default_fb(), 1e-10).unwrap();
        assert!(f.values().iter().all(|&v| v == 1e-10f64.ln()));
    }

    #[test]
    fn doubling_amplitude_adds_log4() {
        let a = noise(3200, 5);
        let cfg = StftConfig::default();
        let f1 = logmel(&stft(&a, &cfg).unwrap(), &default_fb(), 1e-10).unwrap();
        let f2 = logmel(&stft(&a.scaled(2.0), &cfg).unwrap(), &default_fb(), 1e-10).unwrap();
        for (x, y) in f1.values().iter().zip(f2.values()) {
            assert!((y - x - 4f64.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn band_energies_match_dense_multiply() {
        let a = noise(4000, 9);
        let fb = default_fb();
        let s = stft(&a, &StftConfig::default()).unwrap();
        let f = logmel(&s, &fb, 1e-10).unwrap();
        for t in [0, 7, s.n_frames() - 1] {
            for m in 0..40 {
                let mut e = 0.0;
                for k in 0..fb.n_bins() {
                    e += fb.weights[m * fb.n_bins + k] * s.bin(k, t).norm_sqr();
                }
                assert!((f.get(m, t) - e.max(1e-10).ln()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let a = noise(1600, 1);
        let s = stft(&a, &StftConfig { n_fft: 1024, ..StftConfig::default() }).unwrap();
        assert!(logmel(&s, &default_fb(), 1e-10).is_err());
    }
}
