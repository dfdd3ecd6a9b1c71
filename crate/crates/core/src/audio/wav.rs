use std::io::Cursor;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioBuffer;
use crate::error::{Error, Result};

const SCALE: f64 = 32768.0;

/// Read a PCM16 mono WAV file; samples are divided by 32768.
pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Format(format!("{} channels, expected mono", spec.channels)));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Format(format!(
            "{:?} {}-bit samples, expected 16-bit PCM",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if samples.is_empty() {
        return Err(Error::Format(format!("{} has an empty data chunk", path.display())));
    }
    AudioBuffer::new(samples, spec.sample_rate)
}

/// Encode as PCM16 mono WAV bytes, rounding and clamping to the i16 range.
pub fn wav_bytes(audio: &AudioBuffer) -> Result<Vec<u8>> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut w = WavWriter::new(&mut cursor, spec)?;
        for &s in audio.samples() {
            let q = (s * SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
            w.write_sample(q)?;
        }
        w.finalize()?;
    }
    Ok(cursor.into_inner())
}

pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, wav_bytes(audio)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw_pcm16(samples: &[i16], channels: u16) -> Vec<u8> {
        let spec = WavSpec {
            channels,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut cursor = Cursor::new(Vec::new());
        let mut w = WavWriter::new(&mut cursor, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        cursor.into_inner()
    }

    #[test]
    fn scales_by_32768() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        std::fs::write(&p, raw_pcm16(&[0, 16384, -32768], 1)).unwrap();
        let a = read_wav(&p).unwrap();
        assert_eq!(a.samples(), &[0.0, 0.5, -1.0]);
        assert_eq!(a.sample_rate(), 16000);
    }

    #[test]
    fn empty_data_chunk_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.wav");
        std::fs::write(&p, raw_pcm16(&[], 1)).unwrap();
        assert!(read_wav(&p).is_err());
    }

    #[test]
    fn stereo_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        std::fs::write(&p, raw_pcm16(&[1, 2, 3, 4], 2)).unwrap();
        assert!(matches!(read_wav(&p), Err(Error::Format(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn write_then_read_is_within_one_lsb(samples in prop::collection::vec(-1.0f64..0.99, 1..400)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("r.wav");
            let a = AudioBuffer::new(samples.clone(), 16000).unwrap();
            write_wav(&p, &a).unwrap();
            let b = read_wav(&p).unwrap();
            prop_assert_eq!(b.len(), samples.len());
            for (x, y) in samples.iter().zip(b.samples()) {
                prop_assert!((x - y).abs() <= 1.0 / 32768.0);
            }
        }
    }
}
