use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Caps for the scale-invariant SDR so perfect (or perfectly inverted)
/// reconstructions stay finite.
pub const SI_SDR_MAX_DB: f64 = 100.0;
pub const SI_SDR_MIN_DB: f64 = -100.0;

/// Scale-invariant signal-to-distortion ratio in dB: projects the estimate
/// onto the reference and compares target to residual energy.
pub fn si_sdr<T: Scalar>(reference: &Waveform<T>, estimate: &Waveform<T>) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::contract(format!(
            "si_sdr: length mismatch ({} vs {} samples)",
            reference.len(),
            estimate.len()
        )));
    }
    let r = reference.to_f64();
    let e = estimate.to_f64();
    let r_energy: f64 = r.iter().map(|v| v * v).sum();
    if r_energy <= 0.0 {
        return Err(Error::contract("si_sdr: zero reference"));
    }
    let dot: f64 = r.iter().zip(&e).map(|(a, b)| a * b).sum();
    let alpha = dot / r_energy;
    let target_energy = alpha * alpha * r_energy;
    let resid_energy: f64 = r
        .iter()
        .zip(&e)
        .map(|(a, b)| {
            let d = b - alpha * a;
            d * d
        })
        .sum();
    if target_energy <= 0.0 {
        return Ok(SI_SDR_MIN_DB);
    }
    if resid_energy <= target_energy * 1e-20 {
        return Ok(SI_SDR_MAX_DB);
    }
    Ok((10.0 * (target_energy / resid_energy).log10()).clamp(SI_SDR_MIN_DB, SI_SDR_MAX_DB))
}
