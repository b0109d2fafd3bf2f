use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::RngExt;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::{Waveform, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::synth::speechlike_voice;

/// The 12 synthetic interference categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseCategory {
    White,
    Pink,
    Brown,
    Hum,
    Chirp,
    AmTone,
    Clicks,
    Babble,
    Narrowband,
    Square,
    Burst,
    Ring,
}

pub const NOISE_CATEGORIES: [NoiseCategory; 12] = [
    NoiseCategory::White,
    NoiseCategory::Pink,
    NoiseCategory::Brown,
    NoiseCategory::Hum,
    NoiseCategory::Chirp,
    NoiseCategory::AmTone,
    NoiseCategory::Clicks,
    NoiseCategory::Babble,
    NoiseCategory::Narrowband,
    NoiseCategory::Square,
    NoiseCategory::Burst,
    NoiseCategory::Ring,
];

impl NoiseCategory {
    pub fn name(self) -> &'static str {
        match self {
            NoiseCategory::White => "white",
            NoiseCategory::Pink => "pink",
            NoiseCategory::Brown => "brown",
            NoiseCategory::Hum => "hum",
            NoiseCategory::Chirp => "chirp",
            NoiseCategory::AmTone => "am_tone",
            NoiseCategory::Clicks => "clicks",
            NoiseCategory::Babble => "babble",
            NoiseCategory::Narrowband => "narrowband",
            NoiseCategory::Square => "square",
            NoiseCategory::Burst => "burst",
            NoiseCategory::Ring => "ring",
        }
    }
}

impl fmt::Display for NoiseCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NOISE_CATEGORIES
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = NOISE_CATEGORIES.iter().map(|c| c.name()).collect();
                Error::contract(format!("unknown noise category {s:?}; valid: {}", valid.join(", ")))
            })
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller from two uniform draws
    let u1: f64 = rng.random_range(1e-12..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn normalize_rms(mut x: Vec<f64>) -> Vec<f64> {
    let p = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let k = if p > 0.0 { 1.0 / p.sqrt() } else { 1.0 };
    for v in x.iter_mut() {
        *v *= k;
    }
    x
}

fn white(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| gaussian(rng)).collect()
}

/// Paul Kellet's pinking filter: -3 dB/octave within a fraction of a dB
/// over the audible range.
fn pink(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let (mut b0, mut b1, mut b2, mut b3, mut b4, mut b5, mut b6) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    (0..n)
        .map(|_| {
            let w = gaussian(rng);
            b0 = 0.99886 * b0 + w * 0.0555179;
            b1 = 0.99332 * b1 + w * 0.0750759;
            b2 = 0.96900 * b2 + w * 0.1538520;
            b3 = 0.86650 * b3 + w * 0.3104856;
            b4 = 0.55000 * b4 + w * 0.5329522;
            b5 = -0.7616 * b5 - w * 0.0168980;
            let out = b0 + b1 + b2 + b3 + b4 + b5 + b6 + w * 0.5362;
            b6 = w * 0.115926;
            out
        })
        .collect()
}

fn brown(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut acc = 0.0;
    (0..n)
        .map(|_| {
            acc = 0.997 * acc + gaussian(rng);
            acc
        })
        .collect()
}

fn hum(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let sr = SAMPLE_RATE_HZ as f64;
    let phases: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            (1..=5)
                .map(|k| (2.0 * PI * 50.0 * k as f64 * t + phases[k - 1]).sin() / k as f64)
                .sum()
        })
        .collect()
}

fn chirp(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let sr = SAMPLE_RATE_HZ as f64;
    let f_lo = rng.random_range(150.0..400.0);
    let f_hi = rng.random_range(2500.0..5000.0);
    let period_s = rng.random_range(0.4..0.9);
    let period = (period_s * sr) as usize;
    let mut phase = 0.0f64;
    (0..n)
        .map(|i| {
            let frac = (i % period) as f64 / period as f64;
            let f = f_lo + (f_hi - f_lo) * frac;
            phase += 2.0 * PI * f / sr;
            phase.sin()
        })
        .collect()
}

fn am_tone(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let sr = SAMPLE_RATE_HZ as f64;
    let fc = rng.random_range(500.0..2000.0);
    let fm = rng.random_range(2.0..8.0);
    let phi = rng.random_range(0.0..2.0 * PI);
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let env = 1.0 - 0.8 * (0.5 + 0.5 * (2.0 * PI * fm * t + phi).sin());
            env * (2.0 * PI * fc * t).sin()
        })
        .collect()
}

fn clicks(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let sr = SAMPLE_RATE_HZ as f64;
    let mut out = vec![0.0; n];
    let rate = 22.0; // clicks per second
    let mut at = 0usize;
    loop {
        let gap: f64 = rng.random_range(1e-9f64..1.0);
        at += ((-gap.ln() / rate) * sr) as usize + 1;
        if at >= n {
            break;
        }
        let amp = rng.random_range(0.5..1.0) * if rng.random_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 };
        let ring = rng.random_range(800.0..3500.0);
        for k in 0..(0.006 * sr) as usize {
            let i = at + k;
            if i >= n {
                break;
            }
            let t = k as f64 / sr;
            out[i] += amp * (-t / 0.0015).exp() * (2.0 * PI * ring * t).cos();
        }
    }
    if out.iter().all(|&v| v == 0.0) {
        out[0] = 1.0;
    }
    out
}

fn babble(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for _ in 0..6 {
        let voice_seed: u64 = rng.random_range(0..u64::MAX);
        let voice = speechlike_voice(voice_seed, n);
        for (o, v) in out.iter_mut().zip(voice) {
            *o += v;
        }
    }
    out
}

fn narrowband(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // two-pole resonator driven by white noise
    let sr = SAMPLE_RATE_HZ as f64;
    let fc = rng.random_range(400.0..3000.0);
    let r = 0.995f64;
    let (a1, a2) = (2.0 * r * (2.0 * PI * fc / sr).cos(), -r * r);
    let (mut y1, mut y2) = (0.0, 0.0);
    (0..n)
        .map(|_| {
            let y = a1 * y1 + a2 * y2 + gaussian(rng);
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

fn square(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let sr = SAMPLE_RATE_HZ as f64;
    let f0 = rng.random_range(80.0..350.0);
    let phi = rng.random_range(0.0..2.0 * PI);
    (0..n)
        .map(|i| {
            let s = (2.0 * PI * f0 * i as f64 / sr + phi).sin();
            if s >= 0.0 {
                1.0
            } else {
                -1.0
            }
        })
        .collect()
}

fn burst(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let sr = SAMPLE_RATE_HZ as f64;
    let mut out = vec![0.0; n];
    let mut i = 0usize;
    let mut on = true;
    while i < n {
        let dur_s = if on { rng.random_range(0.05..0.15) } else { rng.random_range(0.1..0.4) };
        let dur = (dur_s * sr) as usize;
        if on {
            for k in i..(i + dur).min(n) {
                out[k] = gaussian(rng);
            }
        }
        i += dur;
        on = !on;
    }
    if out.iter().all(|&v| v == 0.0) {
        out[0] = 1.0;
    }
    out
}

fn ring(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let sr = SAMPLE_RATE_HZ as f64;
    let f1 = rng.random_range(700.0..900.0);
    let f2 = f1 * 1.4;
    let warble = rng.random_range(18.0..26.0);
    let on = (0.9 * sr) as usize;
    let cycle = (1.5 * sr) as usize;
    (0..n)
        .map(|i| {
            if i % cycle >= on {
                return 0.0;
            }
            let t = i as f64 / sr;
            let env = 0.6 + 0.4 * (2.0 * PI * warble * t).sin();
            env * ((2.0 * PI * f1 * t).sin() + (2.0 * PI * f2 * t).sin())
        })
        .collect()
}

/// Unit-RMS noise of the requested category, deterministic per
/// (category, seed).
pub fn synth_noise<T: Scalar>(category: NoiseCategory, seed: u64, n_samples: usize) -> Waveform<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15u64.wrapping_mul(category as u64 + 1));
    let raw = match category {
        NoiseCategory::White => white(&mut rng, n_samples),
        NoiseCategory::Pink => pink(&mut rng, n_samples),
        NoiseCategory::Brown => brown(&mut rng, n_samples),
        NoiseCategory::Hum => hum(&mut rng, n_samples),
        NoiseCategory::Chirp => chirp(&mut rng, n_samples),
        NoiseCategory::AmTone => am_tone(&mut rng, n_samples),
        NoiseCategory::Clicks => clicks(&mut rng, n_samples),
        NoiseCategory::Babble => babble(&mut rng, n_samples),
        NoiseCategory::Narrowband => narrowband(&mut rng, n_samples),
        NoiseCategory::Square => square(&mut rng, n_samples),
        NoiseCategory::Burst => burst(&mut rng, n_samples),
        NoiseCategory::Ring => ring(&mut rng, n_samples),
    };
    let norm = normalize_rms(raw);
    Waveform::new(norm.into_iter().map(T::cast).collect(), SAMPLE_RATE_HZ)
}
