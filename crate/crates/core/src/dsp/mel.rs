use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::stft::{istft, Spectrogram, STFT_BINS};
use super::{LogMelSegment, Waveform, LOG_FLOOR, SAMPLE_RATE_HZ};

/// Mel band count over 0-8 kHz.
pub const MEL_BANDS: usize = 80;
/// STFT frames per 200 ms segment (hop 10 ms).
pub const SEG_FRAMES: usize = 20;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular 80-filter mel bank over 0-8 kHz on the 321-bin grid,
/// peak-normalized to 1 (no area normalization).
#[derive(Debug, Clone)]
pub struct MelFilterbank<T: Scalar> {
    /// Dense [MEL_BANDS x STFT_BINS] weights, row-major.
    weights: Vec<T>,
    /// Per-row (start, end) bin support for sparse application.
    support: Vec<(usize, usize)>,
    /// Upper bound on the squared spectral norm, for gradient steps.
    lipschitz: f64,
}

impl<T: Scalar> Default for MelFilterbank<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> MelFilterbank<T> {
    pub fn new() -> Self {
        let f_max = 8000.0;
        let mel_max = hz_to_mel(f_max);
        let centers: Vec<f64> = (0..MEL_BANDS + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (MEL_BANDS + 1) as f64))
            .collect();
        let bin_hz = SAMPLE_RATE_HZ as f64 / 640.0;
        let mut weights = vec![T::zero(); MEL_BANDS * STFT_BINS];
        let mut support = Vec::with_capacity(MEL_BANDS);
        for band in 0..MEL_BANDS {
            let (lo, ctr, hi) = (centers[band], centers[band + 1], centers[band + 2]);
            let mut start = STFT_BINS;
            let mut end = 0;
            for bin in 0..STFT_BINS {
                let f = bin as f64 * bin_hz;
                let w = if f <= lo || f >= hi {
                    0.0
                } else if f <= ctr {
                    (f - lo) / (ctr - lo)
                } else {
                    (hi - f) / (hi - ctr)
                };
                if w > 0.0 {
                    start = start.min(bin);
                    end = end.max(bin + 1);
                    weights[band * STFT_BINS + bin] = T::cast(w);
                }
            }
            if start >= end {
                // extremely narrow low filter: give it its nearest bin
                let bin = ((ctr / bin_hz).round() as usize).min(STFT_BINS - 1);
                weights[band * STFT_BINS + bin] = T::one();
                start = bin;
                end = bin + 1;
            }
            support.push((start, end));
        }
        let lipschitz = Self::estimate_lipschitz(&weights, &support);
        MelFilterbank { weights, support, lipschitz }
    }

    fn estimate_lipschitz(weights: &[T], support: &[(usize, usize)]) -> f64 {
        // power iteration on AᵀA
        let mut v = vec![1.0f64; STFT_BINS];
        let mut lam = 1.0;
        for _ in 0..50 {
            let mut av = vec![0.0f64; MEL_BANDS];
            for band in 0..MEL_BANDS {
                let (s, e) = support[band];
                let row = &weights[band * STFT_BINS..][..STFT_BINS];
                av[band] = (s..e).map(|b| row[b].as_f64() * v[b]).sum();
            }
            let mut atav = vec![0.0f64; STFT_BINS];
            for band in 0..MEL_BANDS {
                let (s, e) = support[band];
                let row = &weights[band * STFT_BINS..][..STFT_BINS];
                for b in s..e {
                    atav[b] += row[b].as_f64() * av[band];
                }
            }
            lam = atav.iter().map(|x| x * x).sum::<f64>().sqrt();
            if lam <= 0.0 {
                return 1.0;
            }
            for x in atav.iter_mut() {
                *x /= lam;
            }
            v = atav;
        }
        lam * 1.05
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn row(&self, band: usize) -> &[T] {
        &self.weights[band * STFT_BINS..][..STFT_BINS]
    }

    pub fn support(&self, band: usize) -> (usize, usize) {
        self.support[band]
    }

    /// Σ_bin w[band,bin], the response to a constant magnitude-1 spectrum.
    pub fn band_mass(&self, band: usize) -> f64 {
        let (s, e) = self.support[band];
        (s..e).map(|b| self.row(band)[b].as_f64()).sum()
    }

    /// One 321-bin magnitude frame -> 80 mel magnitudes.
    pub fn apply(&self, mag_frame: &[T], out: &mut [T]) {
        debug_assert_eq!(mag_frame.len(), STFT_BINS);
        debug_assert_eq!(out.len(), MEL_BANDS);
        for band in 0..MEL_BANDS {
            let (s, e) = self.support[band];
            let row = self.row(band);
            let mut acc = T::zero();
            for b in s..e {
                acc += row[b] * mag_frame[b];
            }
            out[band] = acc;
        }
    }

    /// Non-negative least-squares estimate of the 321-bin magnitudes whose
    /// mel projection matches `mel_frame`, via accelerated projected gradient.
    pub fn pseudo_inverse_frame(&self, mel_frame: &[f64], iters: usize) -> Vec<f64> {
        debug_assert_eq!(mel_frame.len(), MEL_BANDS);
        let step = 1.0 / self.lipschitz;
        let mut s = vec![0.0f64; STFT_BINS];
        let mut s_prev = s.clone();
        let mut y = s.clone();
        let mut t = 1.0f64;
        for _ in 0..iters {
            // grad = Aᵀ(A y - m)
            let mut resid = vec![0.0f64; MEL_BANDS];
            for band in 0..MEL_BANDS {
                let (st, e) = self.support[band];
                let row = self.row(band);
                resid[band] = (st..e).map(|b| row[b].as_f64() * y[b]).sum::<f64>() - mel_frame[band];
            }
            s_prev.copy_from_slice(&s);
            s.copy_from_slice(&y);
            for band in 0..MEL_BANDS {
                let (st, e) = self.support[band];
                let row = self.row(band);
                let r = resid[band] * step;
                for b in st..e {
                    s[b] -= row[b].as_f64() * r;
                }
            }
            for v in s.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            for i in 0..STFT_BINS {
                y[i] = s[i] + beta * (s[i] - s_prev[i]);
            }
            t = t_next;
        }
        s
    }
}

/// Log-mel features, frame-major: `data[frame * 80 + band]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelFrames<T: Scalar> {
    pub frames: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> LogMelFrames<T> {
    /// Projects spectrogram magnitudes onto the mel bank and applies
    /// log(x + 1e-10).
    pub fn from_spectrogram(spec: &Spectrogram<T>, bank: &MelFilterbank<T>) -> Result<Self> {
        if spec.bins != STFT_BINS {
            return Err(Error::contract(format!(
                "log_mel: expected {STFT_BINS}-bin magnitude input, got {}",
                spec.bins
            )));
        }
        let floor = T::cast(LOG_FLOOR);
        let mut data = vec![T::zero(); spec.frames * MEL_BANDS];
        let mut mag = vec![T::zero(); STFT_BINS];
        for t in 0..spec.frames {
            for (m, c) in mag.iter_mut().zip(spec.frame(t)) {
                *m = c.norm();
            }
            bank.apply(&mag, &mut data[t * MEL_BANDS..][..MEL_BANDS]);
        }
        for v in data.iter_mut() {
            *v = (*v + floor).ln();
        }
        Ok(LogMelFrames { frames: spec.frames, data })
    }

    pub fn frame(&self, t: usize) -> &[T] {
        &self.data[t * MEL_BANDS..][..MEL_BANDS]
    }
}

/// Slices frame-major log-mel into non-overlapping 80x20 band-major
/// segments; a trailing partial segment is dropped.
pub fn slice_segments<T: Scalar>(frames: &LogMelFrames<T>) -> Vec<LogMelSegment<T>> {
    let n = frames.frames / SEG_FRAMES;
    let mut segs = Vec::with_capacity(n);
    for k in 0..n {
        let mut values = vec![T::zero(); MEL_BANDS * SEG_FRAMES];
        for f in 0..SEG_FRAMES {
            let src = frames.frame(k * SEG_FRAMES + f);
            for band in 0..MEL_BANDS {
                values[band * SEG_FRAMES + f] = src[band];
            }
        }
        segs.push(LogMelSegment { values, norm_mean: T::zero(), norm_scale: T::one() });
    }
    segs
}

/// Reassembles band-major segments into contiguous frame-major features.
pub fn segments_to_frames<T: Scalar>(segs: &[LogMelSegment<T>]) -> LogMelFrames<T> {
    let frames = segs.len() * SEG_FRAMES;
    let mut data = vec![T::zero(); frames * MEL_BANDS];
    for (k, seg) in segs.iter().enumerate() {
        for f in 0..SEG_FRAMES {
            for band in 0..MEL_BANDS {
                data[(k * SEG_FRAMES + f) * MEL_BANDS + band] = seg.values[band * SEG_FRAMES + f];
            }
        }
    }
    LogMelFrames { frames, data }
}

/// Reconstructs a waveform from (denormalized) log-mel segments and the
/// phase of the corresponding noisy spectrogram: exponentiate, invert the
/// mel projection by non-negative least squares, reattach the noisy phase,
/// then overlap-add.
pub fn mel_pseudo_inverse<T: Scalar>(
    segs: &[LogMelSegment<T>],
    noisy_phase: &Spectrogram<T>,
    bank: &MelFilterbank<T>,
) -> Result<Waveform<T>> {
    if segs.is_empty() {
        return Err(Error::contract("mel_pseudo_inverse: no segments"));
    }
    let frames = segs.len() * SEG_FRAMES;
    if noisy_phase.frames < frames {
        return Err(Error::contract(format!(
            "mel_pseudo_inverse: phase covers {} frames, segments need {frames}",
            noisy_phase.frames
        )));
    }
    let mel = segments_to_frames(segs);
    let phasors = noisy_phase.unit_phasors();
    let mut data = Vec::with_capacity(frames * STFT_BINS);
    let mut mel_f64 = vec![0.0f64; MEL_BANDS];
    for t in 0..frames {
        for (d, v) in mel_f64.iter_mut().zip(mel.frame(t)) {
            // invert log(x + floor)
            *d = (v.as_f64().exp() - LOG_FLOOR).max(0.0);
        }
        let mags = bank.pseudo_inverse_frame(&mel_f64, 160);
        let ph = &phasors[t * STFT_BINS..][..STFT_BINS];
        for (m, p) in mags.iter().zip(ph) {
            let m = T::cast(*m);
            data.push(Complex::new(m * p.re, m * p.im));
        }
    }
    let spec = Spectrogram { frames, bins: STFT_BINS, data };
    istft(&spec)
}
