use num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Waveform;

/// Analysis window length: 640 samples = 40 ms at 16 kHz.
pub const STFT_WIN: usize = 640;
/// Hop: 160 samples = 10 ms.
pub const STFT_HOP: usize = 160;
/// One-sided bin count of a 640-point transform.
pub const STFT_BINS: usize = STFT_WIN / 2 + 1;

/// Complex one-sided spectrogram, frame-major: `data[frame * bins + bin]`.
#[derive(Debug, Clone)]
pub struct Spectrogram<T: Scalar> {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex<T>>,
}

impl<T: Scalar> Spectrogram<T> {
    pub fn frame(&self, t: usize) -> &[Complex<T>] {
        &self.data[t * self.bins..][..self.bins]
    }

    /// Per-bin magnitudes, frame-major.
    pub fn magnitude(&self) -> Vec<T> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    /// Unit phasors; zero bins map to phasor 1 so magnitudes pass through.
    pub fn unit_phasors(&self) -> Vec<Complex<T>> {
        self.data
            .iter()
            .map(|c| {
                let n = c.norm();
                if n > T::zero() {
                    Complex::new(c.re / n, c.im / n)
                } else {
                    Complex::new(T::one(), T::zero())
                }
            })
            .collect()
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_periodic<T: Scalar>(n: usize) -> Vec<T> {
    (0..n)
        .map(|i| T::cast(0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())))
        .collect()
}

/// Frame count of an STFT over `len` samples: floor((len - win) / hop) + 1.
pub fn stft_frames(len: usize) -> usize {
    if len < STFT_WIN {
        0
    } else {
        (len - STFT_WIN) / STFT_HOP + 1
    }
}

/// Short-time Fourier transform with a periodic Hann window of 640 samples
/// and hop 160, truncated to the 321 one-sided bins.
pub fn stft<T: Scalar>(w: &Waveform<T>) -> Result<Spectrogram<T>> {
    w.expect_pipeline_rate("stft")?;
    if w.len() < STFT_WIN {
        return Err(Error::contract(format!(
            "stft: input must hold at least {STFT_WIN} samples, got {}",
            w.len()
        )));
    }
    let frames = stft_frames(w.len());
    let window = hann_periodic::<T>(STFT_WIN);
    let mut planner = FftPlanner::<T>::new();
    let fft = planner.plan_fft_forward(STFT_WIN);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); STFT_WIN];
    let mut data = Vec::with_capacity(frames * STFT_BINS);
    for t in 0..frames {
        let start = t * STFT_HOP;
        for (b, (&s, &wv)) in buf.iter_mut().zip(w.samples[start..start + STFT_WIN].iter().zip(&window)) {
            *b = Complex::new(s * wv, T::zero());
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..STFT_BINS]);
    }
    Ok(Spectrogram { frames, bins: STFT_BINS, data })
}

/// Weighted overlap-add inverse with window-square normalization.
/// `istft(stft(x))` matches `x` on the fully covered interior.
pub fn istft<T: Scalar>(spec: &Spectrogram<T>) -> Result<Waveform<T>> {
    if spec.bins != STFT_BINS {
        return Err(Error::contract(format!(
            "istft: expected {STFT_BINS} bins, got {}",
            spec.bins
        )));
    }
    if spec.frames == 0 {
        return Err(Error::contract("istft: empty spectrogram"));
    }
    let window = hann_periodic::<T>(STFT_WIN);
    let mut planner = FftPlanner::<T>::new();
    let ifft = planner.plan_fft_inverse(STFT_WIN);
    let len = (spec.frames - 1) * STFT_HOP + STFT_WIN;
    let mut num = vec![T::zero(); len];
    let mut den = vec![T::zero(); len];
    let inv_n = T::one() / T::cast(STFT_WIN as f64);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); STFT_WIN];
    for t in 0..spec.frames {
        let frame = spec.frame(t);
        buf[..STFT_BINS].copy_from_slice(frame);
        for k in STFT_BINS..STFT_WIN {
            buf[k] = frame[STFT_WIN - k].conj();
        }
        ifft.process(&mut buf);
        let start = t * STFT_HOP;
        for i in 0..STFT_WIN {
            let x = buf[i].re * inv_n;
            num[start + i] += window[i] * x;
            den[start + i] += window[i] * window[i];
        }
    }
    // Floor the overlap normalization at a fraction of its full-overlap
    // value: for consistent spectra the interior is exact regardless, and
    // for modified (inconsistent) spectra this bounds the edge-sample
    // amplification instead of dividing synthesis error by a vanishing
    // window sum.
    let max_den = den.iter().fold(T::zero(), |m, &d| if d > m { d } else { m });
    let floor = max_den * T::cast(0.1);
    let samples = num
        .into_iter()
        .zip(den)
        .map(|(n, d)| if d > floor { n / d } else if floor > T::zero() { n / floor } else { T::zero() })
        .collect();
    Ok(Waveform::new(samples, super::SAMPLE_RATE_HZ))
}

/// Sample range where the window-square sum has reached its full overlap,
/// i.e. where the round-trip identity holds exactly.
pub fn cola_interior(len: usize) -> std::ops::Range<usize> {
    let margin = STFT_WIN - STFT_HOP;
    if len <= 2 * margin {
        0..0
    } else {
        margin..len - margin
    }
}
