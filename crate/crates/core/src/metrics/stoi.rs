use num_complex::Complex;
use rustfft::FftPlanner;

use crate::dsp::{resample_linear, Waveform};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const STOI_RATE: u32 = 10_000;
const FRAME: usize = 256;
const HOP: usize = 128;
const NFFT: usize = 512;
const N_BANDS: usize = 15;
const LOWEST_CF: f64 = 150.0;
/// Analysis segment length in frames (384 ms at 10 kHz / hop 128).
const SEG: usize = 30;
/// Silent frames sit more than this far below the loudest frame.
const DYN_RANGE_DB: f64 = 40.0;
/// Lower SDR clipping bound.
const BETA: f64 = -15.0;

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect()
}

/// Removes frames whose clean-signal energy falls more than 40 dB below the
/// loudest frame, reconstructing both signals by 50%-overlap-add.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = hann(FRAME);
    let n_frames = if x.len() < FRAME { 0 } else { (x.len() - FRAME) / HOP + 1 };
    let mut energies = Vec::with_capacity(n_frames);
    let mut max_e = f64::NEG_INFINITY;
    for m in 0..n_frames {
        let s = m * HOP;
        let e: f64 = x[s..s + FRAME].iter().zip(&w).map(|(v, wv)| (v * wv) * (v * wv)).sum();
        let db = 10.0 * (e + 1e-300).log10();
        max_e = max_e.max(db);
        energies.push(db);
    }
    let keep: Vec<usize> = (0..n_frames).filter(|&m| energies[m] > max_e - DYN_RANGE_DB).collect();
    let out_len = if keep.is_empty() { 0 } else { (keep.len() - 1) * HOP + FRAME };
    let mut xs = vec![0.0; out_len];
    let mut ys = vec![0.0; out_len];
    for (k, &m) in keep.iter().enumerate() {
        let src = m * HOP;
        let dst = k * HOP;
        for i in 0..FRAME {
            xs[dst + i] += x[src + i] * w[i];
            ys[dst + i] += y[src + i] * w[i];
        }
    }
    (xs, ys)
}

/// One-third-octave band energies: rows = frames, cols = 15 bands rooted at
/// 150 Hz.
fn band_envelopes(x: &[f64]) -> Vec<[f64; N_BANDS]> {
    let w = hann(FRAME);
    let n_frames = if x.len() < FRAME { 0 } else { (x.len() - FRAME) / HOP + 1 };
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(NFFT);
    let mut bands = vec![[0.0; N_BANDS]; n_frames];

    // bin membership per band
    let bin_hz = STOI_RATE as f64 / NFFT as f64;
    let edge = 2f64.powf(1.0 / 6.0);
    let membership: Vec<(usize, usize)> = (0..N_BANDS)
        .map(|k| {
            let cf = LOWEST_CF * 2f64.powf(k as f64 / 3.0);
            let lo = ((cf / edge) / bin_hz).ceil() as usize;
            let hi = (((cf * edge) / bin_hz).ceil() as usize).min(NFFT / 2 + 1);
            (lo, hi)
        })
        .collect();

    let mut buf = vec![Complex::new(0.0, 0.0); NFFT];
    for (m, row) in bands.iter_mut().enumerate() {
        let s = m * HOP;
        for i in 0..NFFT {
            buf[i] = if i < FRAME {
                Complex::new(x[s + i] * w[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (k, &(lo, hi)) in membership.iter().enumerate() {
            let e: f64 = (lo..hi).map(|b| buf[b].norm_sqr()).sum();
            row[k] = e.sqrt();
        }
    }
    bands
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    let denom = (va * vb).sqrt();
    if denom > 0.0 {
        cov / denom
    } else {
        0.0
    }
}

/// Short-time objective intelligibility of `degraded` against `clean`,
/// in [0, 1]: 10 kHz analysis, clean-referenced silent-frame removal,
/// 15 one-third-octave band envelopes, 384 ms sliding segments with
/// normalization + clipping, averaged envelope correlations.
pub fn stoi<T: Scalar>(clean: &Waveform<T>, degraded: &Waveform<T>) -> Result<f64> {
    if clean.len() != degraded.len() {
        return Err(Error::contract(format!(
            "stoi: length mismatch ({} vs {} samples)",
            clean.len(),
            degraded.len()
        )));
    }
    if clean.duration_s() < 0.384 {
        return Err(Error::contract(format!(
            "stoi: input too short ({:.3} s < 0.384 s)",
            clean.duration_s()
        )));
    }
    let x10 = resample_linear(&clean.cast_to::<f64>(), STOI_RATE);
    let y10 = resample_linear(&degraded.cast_to::<f64>(), STOI_RATE);
    let (xs, ys) = remove_silent_frames(&x10.samples, &y10.samples);
    let xb = band_envelopes(&xs);
    let yb = band_envelopes(&ys);
    if xb.len() < SEG {
        return Err(Error::contract(
            "stoi: fewer than 30 frames remain after silent-frame removal",
        ));
    }
    let clip = 1.0 + 10f64.powf(-BETA / 20.0);
    let mut total = 0.0;
    let mut count = 0usize;
    let mut y_clipped = [0.0f64; SEG];
    for m in SEG..=xb.len() {
        for band in 0..N_BANDS {
            let mut x_seg = [0.0f64; SEG];
            let mut y_seg = [0.0f64; SEG];
            for (i, f) in (m - SEG..m).enumerate() {
                x_seg[i] = xb[f][band];
                y_seg[i] = yb[f][band];
            }
            let xn: f64 = x_seg.iter().map(|v| v * v).sum::<f64>().sqrt();
            let yn: f64 = y_seg.iter().map(|v| v * v).sum::<f64>().sqrt();
            let alpha = if yn > 0.0 { xn / yn } else { 0.0 };
            for i in 0..SEG {
                y_clipped[i] = (y_seg[i] * alpha).min(x_seg[i] * clip);
            }
            total += correlation(&x_seg, &y_clipped);
            count += 1;
        }
    }
    Ok((total / count as f64).clamp(0.0, 1.0))
}
