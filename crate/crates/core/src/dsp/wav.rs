use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Waveform, SAMPLE_RATE_HZ};

/// Reads a 16-bit PCM mono WAV at 16 kHz; anything else is rejected with a
/// message naming the offending property.
pub fn read_wav<T: Scalar>(path: &Path) -> Result<Waveform<T>> {
    let reader = hound::WavReader::open(path).map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Wav(format!("{}: expected mono, got {} channels", path.display(), spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE_HZ {
        return Err(Error::Wav(format!(
            "{}: expected {SAMPLE_RATE_HZ} Hz, got {} Hz",
            path.display(),
            spec.sample_rate
        )));
    }
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Wav(format!(
            "{}: expected 16-bit integer PCM, got {}-bit {:?}",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let scale = 1.0 / 32768.0;
    let samples: std::result::Result<Vec<T>, hound::Error> = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| T::cast(v as f64 * scale)))
        .collect();
    let samples = samples.map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    Ok(Waveform::new(samples, SAMPLE_RATE_HZ))
}

/// Writes 16-bit PCM mono at 16 kHz, clamping samples to [-1, 1].
pub fn write_wav<T: Scalar>(path: &Path, wav: &Waveform<T>) -> Result<()> {
    if wav.sample_rate_hz != SAMPLE_RATE_HZ {
        return Err(Error::contract(format!(
            "write_wav: waveform must be {SAMPLE_RATE_HZ} Hz, got {}",
            wav.sample_rate_hz
        )));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE_HZ,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer =
        hound::WavWriter::create(path, spec).map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    for s in &wav.samples {
        let v = (s.as_f64().clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    }
    writer.finalize().map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip_within_quantization() {
        let dir = std::env::temp_dir().join("vsegan_wav_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("tone.wav");
        let w = Waveform::new(
            (0..1600).map(|i| 0.5 * ((i as f64) * 0.05).sin()).collect::<Vec<f64>>(),
            SAMPLE_RATE_HZ,
        );
        write_wav(&path, &w).unwrap();
        let back: Waveform<f64> = read_wav(&path).unwrap();
        assert_eq!(back.len(), w.len());
        let max_err = back
            .samples
            .iter()
            .zip(&w.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1.0 / 32000.0, "max quantization err {max_err}");
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn rejects_wrong_format() {
        let dir = std::env::temp_dir().join("vsegan_wav_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: SAMPLE_RATE_HZ,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..100 {
            writer.write_sample(0i16).unwrap();
            writer.write_sample(0i16).unwrap();
        }
        writer.finalize().unwrap();
        let err = read_wav::<f32>(&path).unwrap_err();
        assert!(err.to_string().contains("mono"), "{err}");
        std::fs::remove_file(&path).ok();
    }
}
