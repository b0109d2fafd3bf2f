use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Waveform;

/// Repeats (tiles) or crops `noise` to exactly `len` samples,
/// deterministically from the start.
pub fn tile_to_len<T: Scalar>(noise: &Waveform<T>, len: usize) -> Waveform<T> {
    let mut samples = Vec::with_capacity(len);
    while samples.len() < len {
        let take = (len - samples.len()).min(noise.samples.len());
        samples.extend_from_slice(&noise.samples[..take]);
    }
    Waveform::new(samples, noise.sample_rate_hz)
}

/// Scales `noise` so that 10·log10(P_clean / P_noise) equals `snr_db`, then
/// returns `(clean + scaled_noise, scaled_noise)`. Noise shorter than the
/// clean signal is tiled first. Mixtures peaking above 1.0 are legal but
/// warned about, since they would clip on 16-bit WAV export.
pub fn mix_at_snr<T: Scalar>(
    clean: &Waveform<T>,
    noise: &Waveform<T>,
    snr_db: f64,
) -> Result<(Waveform<T>, Waveform<T>)> {
    let p_clean = clean.power();
    if p_clean <= 0.0 {
        return Err(Error::contract("mix_at_snr: clean signal has zero power"));
    }
    let noise = tile_to_len(noise, clean.len());
    let p_noise = noise.power();
    if p_noise <= 0.0 {
        return Err(Error::contract("mix_at_snr: noise signal has zero power"));
    }
    let scale = T::cast((p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt());
    let scaled: Vec<T> = noise.samples.iter().map(|&n| n * scale).collect();
    let mixed: Vec<T> = clean.samples.iter().zip(&scaled).map(|(&c, &n)| c + n).collect();
    let peak = mixed.iter().fold(0.0f64, |m, s| m.max(s.as_f64().abs()));
    if peak > 1.0 {
        eprintln!("warning: mix_at_snr at {snr_db} dB peaks at {peak:.3} (> 1.0); 16-bit export would clip");
    }
    Ok((
        Waveform::new(mixed, clean.sample_rate_hz),
        Waveform::new(scaled, clean.sample_rate_hz),
    ))
}

/// SNR implied by a (clean, noise-component) pair, in dB.
pub fn measure_snr_db<T: Scalar>(clean: &Waveform<T>, noise: &Waveform<T>) -> f64 {
    10.0 * (clean.power() / noise.power()).log10()
}

/// Per-iteration noise attenuation draw in `[lo_db, hi_db]`.
#[derive(Debug, Clone, Copy)]
pub struct Augmenter {
    pub lo_db: f64,
    pub hi_db: f64,
}

impl Augmenter {
    pub fn new(lo_db: f64, hi_db: f64) -> Result<Self> {
        if lo_db > hi_db || lo_db.is_nan() || hi_db.is_nan() {
            return Err(Error::contract(format!("augmenter: invalid range [{lo_db}, {hi_db}]")));
        }
        Ok(Augmenter { lo_db, hi_db })
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lo_db == self.hi_db {
            return self.lo_db;
        }
        rng.random_range(self.lo_db..self.hi_db)
    }

    /// Amplitude factor for a dB power attenuation.
    pub fn amplitude_factor(db: f64) -> f64 {
        10f64.powf(db / 20.0)
    }

    pub fn apply<T: Scalar>(wav: &Waveform<T>, db: f64) -> Waveform<T> {
        let k = T::cast(Self::amplitude_factor(db));
        Waveform::new(wav.samples.iter().map(|&s| s * k).collect(), wav.sample_rate_hz)
    }
}

/// Linear-interpolation resampler. A utility for metric-internal rate
/// changes and file ingestion, not a mastering-quality resampler.
pub fn resample_linear<T: Scalar>(w: &Waveform<T>, target_rate: u32) -> Waveform<T> {
    if w.sample_rate_hz == target_rate || w.is_empty() {
        return Waveform::new(w.samples.clone(), target_rate);
    }
    let ratio = w.sample_rate_hz as f64 / target_rate as f64;
    let out_len = ((w.len() as f64) / ratio).floor() as usize;
    let mut samples = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let pos = i as f64 * ratio;
        let i0 = pos.floor() as usize;
        let frac = T::cast(pos - i0 as f64);
        let a = w.samples[i0];
        let b = if i0 + 1 < w.len() { w.samples[i0 + 1] } else { a };
        samples.push(a + (b - a) * frac);
    }
    Waveform::new(samples, target_rate)
}
