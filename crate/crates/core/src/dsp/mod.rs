//! Signal front-end: waveforms, STFT/iSTFT, log-mel features, SNR-controlled
//! mixing and the normalization used by the tanh-headed generator.

mod mel;
mod mix;
mod stft;
mod wav;

pub use mel::{mel_pseudo_inverse, segments_to_frames, slice_segments, LogMelFrames, MelFilterbank, MEL_BANDS, SEG_FRAMES};
pub use mix::{measure_snr_db, mix_at_snr, resample_linear, tile_to_len, Augmenter};
pub use stft::{cola_interior, hann_periodic, istft, stft, stft_frames, Spectrogram, STFT_BINS, STFT_HOP, STFT_WIN};
pub use wav::{read_wav, write_wav};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Pipeline sample rate. Entry points reject anything else; resample first.
pub const SAMPLE_RATE_HZ: u32 = 16000;
/// Video frame rate the corpus is aligned to.
pub const VIDEO_FPS: u32 = 25;
/// Square mouth-region frame edge length in pixels.
pub const VIDEO_SIZE: usize = 80;
/// Video frames covering one 200 ms segment.
pub const VIDEO_FRAMES_PER_SEG: usize = 5;
/// Additive floor applied before the log in log-mel extraction.
pub const LOG_FLOOR: f64 = 1e-10;

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform<T: Scalar> {
    pub samples: Vec<T>,
    pub sample_rate_hz: u32,
}

impl<T: Scalar> Waveform<T> {
    pub fn new(samples: Vec<T>, sample_rate_hz: u32) -> Self {
        Waveform { samples, sample_rate_hz }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Mean squared sample value.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.as_f64() * s.as_f64()).sum::<f64>() / self.samples.len() as f64
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.as_f64()).collect()
    }

    pub fn cast_to<U: Scalar>(&self) -> Waveform<U> {
        Waveform::new(self.samples.iter().map(|s| U::cast(s.as_f64())).collect(), self.sample_rate_hz)
    }

    pub(crate) fn expect_pipeline_rate(&self, what: &str) -> Result<()> {
        if self.sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(Error::contract(format!(
                "{what}: expected {SAMPLE_RATE_HZ} Hz input, got {} Hz (resample first)",
                self.sample_rate_hz
            )));
        }
        Ok(())
    }
}

/// One 80x20 log-mel slice (band-major: `values[band * 20 + frame]`),
/// carrying the affine normalization that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSegment<T: Scalar> {
    pub values: Vec<T>,
    pub norm_mean: T,
    pub norm_scale: T,
}

impl<T: Scalar> LogMelSegment<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.len() != MEL_BANDS * SEG_FRAMES {
            return Err(Error::contract(format!(
                "log-mel segment must hold {MEL_BANDS}x{SEG_FRAMES} values, got {}",
                values.len()
            )));
        }
        Ok(LogMelSegment { values, norm_mean: T::zero(), norm_scale: T::one() })
    }
}

/// Five aligned 80x80 single-channel frames covering 200 ms
/// (`frames[frame * 6400 + row * 80 + col]`, values in [0,1]).
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSegment<T: Scalar> {
    pub frames: Vec<T>,
}

impl<T: Scalar> VideoSegment<T> {
    pub fn new(frames: Vec<T>) -> Result<Self> {
        if frames.len() != VIDEO_FRAMES_PER_SEG * VIDEO_SIZE * VIDEO_SIZE {
            return Err(Error::contract(format!(
                "video segment must hold {VIDEO_FRAMES_PER_SEG}x{VIDEO_SIZE}x{VIDEO_SIZE} values, got {}",
                frames.len()
            )));
        }
        if frames.iter().any(|v| *v < T::zero() || *v > T::one()) {
            return Err(Error::contract("video segment values must lie in [0,1]"));
        }
        Ok(VideoSegment { frames })
    }
}

/// Training-split log-mel range used to map values into [-1,1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: f64,
    pub max: f64,
}

impl NormStats {
    /// Center/half-width of the affine map, padded by a 1% margin so the
    /// corpus extremes land strictly inside [-1,1].
    pub fn affine(&self) -> (f64, f64) {
        let center = 0.5 * (self.min + self.max);
        let half = (0.5 * (self.max - self.min) * 1.01).max(1e-6);
        (center, half)
    }

    pub fn accumulate(&mut self, v: f64) {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    pub fn empty() -> Self {
        NormStats { min: f64::INFINITY, max: f64::NEG_INFINITY }
    }

    pub fn is_valid(&self) -> bool {
        self.min.is_finite() && self.max.is_finite() && self.max >= self.min
    }
}

/// Affine map into [-1,1] with clamping; records the transform on the segment.
pub fn normalize<T: Scalar>(seg: &LogMelSegment<T>, stats: &NormStats) -> Result<LogMelSegment<T>> {
    if !stats.is_valid() {
        return Err(Error::contract("normalization stats missing or invalid"));
    }
    let (center, half) = stats.affine();
    let (c, h) = (T::cast(center), T::cast(half));
    let one = T::one();
    let values = seg
        .values
        .iter()
        .map(|&v| {
            let n = (v - c) / h;
            n.max(-one).min(one)
        })
        .collect();
    Ok(LogMelSegment { values, norm_mean: c, norm_scale: h })
}

/// Inverse of [`normalize`], exact within the clamp.
pub fn denormalize<T: Scalar>(seg: &LogMelSegment<T>) -> LogMelSegment<T> {
    let values = seg.values.iter().map(|&v| v * seg.norm_scale + seg.norm_mean).collect();
    LogMelSegment { values, norm_mean: T::zero(), norm_scale: T::one() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_round_trip_and_clamp() {
        let stats = NormStats { min: -10.0, max: 6.0 };
        let mut vals = vec![0.0f64; MEL_BANDS * SEG_FRAMES];
        vals[0] = -10.0; // corpus min
        vals[1] = 6.0; // corpus max
        vals[2] = 6.0 + 1.6; // +10% of range, must clamp
        vals[3] = -2.31;
        let seg = LogMelSegment::new(vals).unwrap();
        let n = normalize(&seg, &stats).unwrap();
        assert!(n.values.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(n.values[1] <= 1.0);
        assert_eq!(n.values[2], 1.0, "out-of-range value clamps to 1.0");

        let d = denormalize(&n);
        // in-range values round-trip exactly up to one rounding
        assert!((d.values[0] - (-10.0)).abs() < 1e-12);
        assert!((d.values[1] - 6.0).abs() < 1e-12);
        assert!((d.values[3] - (-2.31)).abs() < 1e-12);
    }

    #[test]
    fn normalize_requires_stats() {
        let seg = LogMelSegment::new(vec![0.0f32; MEL_BANDS * SEG_FRAMES]).unwrap();
        assert!(normalize(&seg, &NormStats::empty()).is_err());
    }

    #[test]
    fn video_segment_validates_range() {
        let n = VIDEO_FRAMES_PER_SEG * VIDEO_SIZE * VIDEO_SIZE;
        assert!(VideoSegment::new(vec![0.5f32; n]).is_ok());
        assert!(VideoSegment::new(vec![1.5f32; n]).is_err());
        assert!(VideoSegment::new(vec![0.5f32; n - 1]).is_err());
    }
}
