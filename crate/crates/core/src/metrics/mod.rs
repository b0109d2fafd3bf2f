//! Objective evaluation: STOI for intelligibility plus SI-SDR and
//! log-spectral distance as the distortion/quality measures.

mod sisdr;
mod stoi;

pub use sisdr::{si_sdr, SI_SDR_MAX_DB, SI_SDR_MIN_DB};
pub use stoi::stoi;

use std::path::Path;

use crate::corpus::{load_utterance, Manifest};
use crate::dsp::{mix_at_snr, stft, Waveform};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::train::{Checkpoint, Enhancer, Model};

/// Root-mean-square over frames of the per-frame RMS log10-spectral
/// difference, times 20 (dB). Inputs are aligned magnitude spectrograms.
pub fn lsd(clean_mag: &[f64], enhanced_mag: &[f64], bins: usize) -> Result<f64> {
    if clean_mag.len() != enhanced_mag.len() || bins == 0 || clean_mag.len() % bins != 0 {
        return Err(Error::contract(format!(
            "lsd: shape mismatch ({} vs {} values, {bins} bins)",
            clean_mag.len(),
            enhanced_mag.len()
        )));
    }
    let frames = clean_mag.len() / bins;
    let floor = 1e-10f64;
    let mut acc = 0.0;
    for t in 0..frames {
        let mut frame = 0.0;
        for b in 0..bins {
            let d = (clean_mag[t * bins + b] + floor).log10() - (enhanced_mag[t * bins + b] + floor).log10();
            frame += d * d;
        }
        let frame_rms_db = 20.0 * (frame / bins as f64).sqrt();
        acc += frame_rms_db * frame_rms_db;
    }
    Ok((acc / frames as f64).sqrt())
}

/// One evaluation measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub utterance: String,
    pub snr_db: f64,
    /// "noisy" or "enhanced"
    pub condition: &'static str,
    pub stoi: f64,
    pub sisdr_db: f64,
    pub lsd_db: f64,
}

pub const EVAL_HEADER: &str = "utterance,snr_db,condition,stoi,sisdr_db,lsd_db";

impl EvalRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6}",
            self.utterance, self.snr_db, self.condition, self.stoi, self.sisdr_db, self.lsd_db
        )
    }
}

/// Per-condition medians over the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub snr_db: f64,
    pub condition: &'static str,
    pub median_stoi: f64,
    pub median_sisdr_db: f64,
    pub median_lsd_db: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub summaries: Vec<EvalSummary>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(EVAL_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.to_csv());
            out.push('\n');
        }
        out
    }

    pub fn summary(&self, snr_db: f64, condition: &str) -> Option<&EvalSummary> {
        self.summaries
            .iter()
            .find(|s| s.snr_db == snr_db && s.condition == condition)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn truncate<T: Scalar>(w: &Waveform<T>, len: usize) -> Waveform<T> {
    Waveform::new(w.samples[..len].to_vec(), w.sample_rate_hz)
}

fn spec_mag_f64<T: Scalar>(w: &Waveform<T>) -> Result<(Vec<f64>, usize)> {
    let s = stft(w)?;
    Ok((s.magnitude().iter().map(|m| m.as_f64()).collect(), s.bins))
}

/// Mixes every manifest utterance at every requested SNR, enhances it with
/// the model, and measures STOI / SI-SDR / LSD for both the noisy input and
/// the enhanced output (against the clean reference, truncated to whole
/// segments).
pub fn evaluate<T: Scalar>(model: &Model<T>, manifest: &Manifest, base_dir: &Path, snrs_db: &[f64]) -> Result<EvalReport> {
    if snrs_db.is_empty() {
        return Err(Error::contract("evaluate: empty snr list"));
    }
    let enhancer = Enhancer::from_model(model)?;
    let mut rows = Vec::with_capacity(manifest.entries.len() * snrs_db.len() * 2);
    for entry in &manifest.entries {
        let u = load_utterance::<T>(entry, base_dir)?;
        for &snr in snrs_db {
            let (noisy, _) = mix_at_snr(&u.clean, &u.noise, snr)?;
            let enhanced = enhancer.enhance(&noisy, &u.video)?;
            let n = enhanced.len();
            let clean_t = truncate(&u.clean, n);
            let noisy_t = truncate(&noisy, n);
            let (clean_mag, bins) = spec_mag_f64(&clean_t)?;
            let (noisy_mag, _) = spec_mag_f64(&noisy_t)?;
            let (enh_mag, _) = spec_mag_f64(&enhanced)?;
            rows.push(EvalRow {
                utterance: entry.id.clone(),
                snr_db: snr,
                condition: "noisy",
                stoi: stoi(&clean_t, &noisy_t)?,
                sisdr_db: si_sdr(&clean_t, &noisy_t)?,
                lsd_db: lsd(&clean_mag, &noisy_mag, bins)?,
            });
            rows.push(EvalRow {
                utterance: entry.id.clone(),
                snr_db: snr,
                condition: "enhanced",
                stoi: stoi(&clean_t, &enhanced)?,
                sisdr_db: si_sdr(&clean_t, &enhanced)?,
                lsd_db: lsd(&clean_mag, &enh_mag, bins)?,
            });
        }
    }
    let mut summaries = Vec::new();
    for &snr in snrs_db {
        for condition in ["noisy", "enhanced"] {
            let pick = |f: fn(&EvalRow) -> f64| {
                median(
                    rows.iter()
                        .filter(|r| r.snr_db == snr && r.condition == condition)
                        .map(f)
                        .collect(),
                )
            };
            summaries.push(EvalSummary {
                snr_db: snr,
                condition,
                median_stoi: pick(|r| r.stoi),
                median_sisdr_db: pick(|r| r.sisdr_db),
                median_lsd_db: pick(|r| r.lsd_db),
            });
        }
    }
    Ok(EvalReport { rows, summaries })
}

/// Loads a checkpoint and evaluates it (precision dispatched by the caller).
pub fn evaluate_checkpoint<T: Scalar>(
    ckpt: &Path,
    manifest_path: &Path,
    snrs_db: &[f64],
) -> Result<EvalReport> {
    let ck = Checkpoint::load(ckpt)?;
    let (model, _) = Model::<T>::from_checkpoint(&ck)?;
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    evaluate(&model, &manifest, &base, snrs_db)
}
