use super::energy;
use crate::error::{Error, Result};

/// Both metrics saturate at this magnitude so degenerate inputs stay finite.
pub const METRIC_CLAMP_DB: f64 = 100.0;

fn ratio_db(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        return METRIC_CLAMP_DB;
    }
    if num <= 0.0 {
        return -METRIC_CLAMP_DB;
    }
    (10.0 * (num / den).log10()).clamp(-METRIC_CLAMP_DB, METRIC_CLAMP_DB)
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// Scale-invariant signal-to-noise ratio of `estimate` against `reference`,
/// in dB.
///
/// The reference is projected onto the estimate's direction and the residual
/// is taken against that projection, so any positive rescaling of either
/// signal leaves the score unchanged.
pub fn si_snr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    check_lengths(estimate, reference)?;
    let ref_energy = energy(reference);
    if ref_energy == 0.0 {
        return Err(Error::InvalidInput(
            "SI-SNR reference has zero energy".into(),
        ));
    }
    let dot: f64 = estimate.iter().zip(reference).map(|(e, s)| e * s).sum();
    let scale = dot / ref_energy;
    let (mut target, mut noise) = (0.0, 0.0);
    for (&e, &s) in estimate.iter().zip(reference) {
        let t = scale * s;
        target += t * t;
        noise += (e - t) * (e - t);
    }
    Ok(ratio_db(target, noise))
}

/// Echo return loss enhancement: power of the microphone signal over power of
/// the residual after cancellation, in dB.
pub fn erle(mic: &[f64], residual: &[f64]) -> Result<f64> {
    check_lengths(mic, residual)?;
    Ok(ratio_db(energy(mic), energy(residual)))
}
