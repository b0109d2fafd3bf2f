use std::f64::consts::PI;

use rand::RngExt;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::{Waveform, SAMPLE_RATE_HZ, VIDEO_FPS, VIDEO_SIZE};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One synthetic utterance: harmonic speech-like audio plus mouth-region
/// frames whose aperture tracks the amplitude envelope.
#[derive(Debug, Clone)]
pub struct SynthUtterance<T: Scalar> {
    pub clean: Waveform<T>,
    /// `n_frames` stacked 80x80 frames, values in [0,1].
    pub frames: Vec<T>,
    pub n_frames: usize,
    pub seed: u64,
    pub duration_s: f64,
    /// Per-frame vertical lip aperture, the video-side envelope proxy.
    pub aperture: Vec<f64>,
}

struct VoiceParams {
    n_harmonics: usize,
    formant1: f64,
    bw1: f64,
    formant2: f64,
    bw2: f64,
    syllable_hz: f64,
    syllable_phase: f64,
    f0_start: f64,
}

impl VoiceParams {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        VoiceParams {
            n_harmonics: rng.random_range(3..=5),
            formant1: rng.random_range(300.0..900.0),
            bw1: rng.random_range(120.0..220.0),
            formant2: rng.random_range(1000.0..2200.0),
            bw2: rng.random_range(200.0..350.0),
            syllable_hz: rng.random_range(3.0..6.0),
            syllable_phase: rng.random_range(0.0..2.0 * PI),
            f0_start: rng.random_range(110.0..260.0),
        }
    }

    fn formant_weight(&self, f: f64) -> f64 {
        let g1 = (-((f - self.formant1).powi(2)) / (2.0 * self.bw1 * self.bw1)).exp();
        let g2 = 0.8 * (-((f - self.formant2).powi(2)) / (2.0 * self.bw2 * self.bw2)).exp();
        0.15 + g1 + g2
    }
}

/// Syllabic amplitude envelope in [0,1]-ish range with onset/offset ramps.
fn envelope(p: &VoiceParams, t: f64, duration: f64) -> f64 {
    let syl = (0.5 + 0.5 * (2.0 * PI * p.syllable_hz * t + p.syllable_phase).sin()).powf(1.5);
    let ramp = 0.03;
    let onset = (t / ramp).min(1.0);
    let offset = ((duration - t) / ramp).clamp(0.0, 1.0);
    (0.12 + 0.88 * syl) * onset * offset
}

/// Core speech-like synthesis shared with the babble noise generator:
/// 3-5 harmonics on a random-walked fundamental (90-300 Hz), formant-style
/// spectral emphasis and syllabic amplitude modulation.
pub fn speechlike_voice(seed: u64, n_samples: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = VoiceParams::draw(&mut rng);
    let sr = SAMPLE_RATE_HZ as f64;
    let duration = n_samples as f64 / sr;
    let block = 160; // recompute harmonic amplitudes every 10 ms
    let mut f0 = p.f0_start;
    let mut phases = vec![0.0f64; p.n_harmonics];
    let mut amps = vec![0.0f64; p.n_harmonics];
    let mut out = vec![0.0f64; n_samples];
    let mut i = 0;
    while i < n_samples {
        f0 = (f0 * (1.0 + rng.random_range(-0.02..0.02))).clamp(90.0, 300.0);
        for (k, a) in amps.iter_mut().enumerate() {
            let h = (k + 1) as f64;
            *a = p.formant_weight(h * f0) / h.sqrt();
        }
        let end = (i + block).min(n_samples);
        for j in i..end {
            let t = j as f64 / sr;
            let env = envelope(&p, t, duration);
            let mut s = 0.0;
            for (k, phase) in phases.iter_mut().enumerate() {
                *phase += 2.0 * PI * (k + 1) as f64 * f0 / sr;
                s += amps[k] * phase.sin();
            }
            out[j] = env * s;
        }
        i = end;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let k = 0.5 / peak;
        for v in out.iter_mut() {
            *v *= k;
        }
    }
    out
}

fn render_frame<T: Scalar>(out: &mut [T], aperture: f64, jitter_x: f64) {
    let size = VIDEO_SIZE;
    let (cx, cy) = (size as f64 / 2.0, size as f64 * 0.58);
    let semi_x = 21.0 + 2.0 * jitter_x;
    let semi_y = 3.0 + 19.0 * aperture;
    for row in 0..size {
        for col in 0..size {
            let dx = (col as f64 - cx) / semi_x;
            let dy = (row as f64 - cy) / semi_y;
            let d = (dx * dx + dy * dy).sqrt();
            // bright mouth opening on a dark field, soft 1-px edge
            let v = if d <= 0.95 {
                0.9
            } else if d < 1.05 {
                0.9 - (d - 0.95) * 8.0
            } else {
                0.1
            };
            out[row * size + col] = T::cast(v.clamp(0.1, 0.9));
        }
    }
}

/// Deterministic synthetic utterance. `duration_s` must be at least 0.4 s
/// so there is something to segment.
pub fn synth_utterance<T: Scalar>(seed: u64, duration_s: f64) -> Result<SynthUtterance<T>> {
    if duration_s < 0.4 {
        return Err(Error::contract(format!("synth_utterance: duration {duration_s} s < 0.4 s")));
    }
    let n_samples = (duration_s * SAMPLE_RATE_HZ as f64).round() as usize;
    let n_frames = (duration_s * VIDEO_FPS as f64).round() as usize;
    let audio = speechlike_voice(seed, n_samples);

    // per-video-frame RMS envelope drives the lip aperture
    let frame_len = SAMPLE_RATE_HZ as usize / VIDEO_FPS as usize;
    let mut env: Vec<f64> = (0..n_frames)
        .map(|f| {
            let s = f * frame_len;
            let e = (s + frame_len).min(n_samples);
            if s >= e {
                return 0.0;
            }
            (audio[s..e].iter().map(|v| v * v).sum::<f64>() / (e - s) as f64).sqrt()
        })
        .collect();
    let max_env = env.iter().fold(0.0f64, |m, v| m.max(*v)).max(1e-9);
    for v in env.iter_mut() {
        *v /= max_env;
    }

    let mut jitter_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5_5a5a_dead_beef);
    let mut frames = vec![T::zero(); n_frames * VIDEO_SIZE * VIDEO_SIZE];
    let mut aperture = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let jit: f64 = jitter_rng.random_range(-0.03..0.03);
        let jx: f64 = jitter_rng.random_range(-1.0..1.0);
        let a = (env[f] + jit).clamp(0.02, 1.0);
        aperture.push(a);
        render_frame(&mut frames[f * VIDEO_SIZE * VIDEO_SIZE..][..VIDEO_SIZE * VIDEO_SIZE], a, jx);
    }

    Ok(SynthUtterance {
        clean: Waveform::new(audio.into_iter().map(T::cast).collect(), SAMPLE_RATE_HZ),
        frames,
        n_frames,
        seed,
        duration_s,
        aperture,
    })
}

/// Pearson correlation of two equal-length series.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (da, db) = (a[i] - ma, b[i] - mb);
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    let denom = (va * vb).sqrt();
    if denom > 0.0 {
        cov / denom
    } else {
        0.0
    }
}

/// Per-video-frame RMS of a waveform, for aperture/envelope correlation.
pub fn frame_rms_envelope<T: Scalar>(w: &Waveform<T>, n_frames: usize) -> Vec<f64> {
    let frame_len = SAMPLE_RATE_HZ as usize / VIDEO_FPS as usize;
    (0..n_frames)
        .map(|f| {
            let s = f * frame_len;
            let e = (s + frame_len).min(w.len());
            if s >= e {
                return 0.0;
            }
            (w.samples[s..e].iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>() / (e - s) as f64).sqrt()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let a: SynthUtterance<f32> = synth_utterance(42, 1.0).unwrap();
        let b: SynthUtterance<f32> = synth_utterance(42, 1.0).unwrap();
        assert_eq!(a.clean.samples, b.clean.samples);
        assert_eq!(a.frames, b.frames);
    }

    #[test]
    fn one_second_utterance_has_25_frames_and_16000_samples() {
        let u: SynthUtterance<f32> = synth_utterance(1, 1.0).unwrap();
        assert_eq!(u.n_frames, 25);
        assert_eq!(u.clean.len(), 16000);
        assert!(synth_utterance::<f32>(1, 0.3).is_err());
    }

    #[test]
    fn aperture_tracks_audio_envelope_across_seeds() {
        let mut below = 0;
        for seed in 0..100u64 {
            let u: SynthUtterance<f64> = synth_utterance(seed, 1.0).unwrap();
            let env = frame_rms_envelope(&u.clean, u.n_frames);
            let r = pearson(&u.aperture, &env);
            if r <= 0.5 {
                below += 1;
            }
        }
        assert_eq!(below, 0, "{below}/100 seeds fell at or below correlation 0.5");
    }

    #[test]
    fn frames_lie_in_unit_range() {
        let u: SynthUtterance<f32> = synth_utterance(5, 0.6).unwrap();
        assert!(u.frames.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
