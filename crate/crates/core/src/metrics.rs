//! Per-source quality scores against ground truth.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dsp::{peak_normalize, StftConfig, StftPlan};
use crate::error::{Error, Result};

pub const DB_CAP: f64 = 100.0;
const SNR_EPS: f64 = 1e-12;
const GRAM_RIDGE: f64 = 1e-12;
/// Relative pivot below which the reference Gram matrix counts as singular.
const GRAM_MIN_PIVOT: f64 = 1e-10;
pub const ENVELOPE_WINDOW: usize = 512;
pub const ENVELOPE_HOP: usize = 256;

fn to_db(num: f64, den: f64) -> f64 {
    if num <= 0.0 {
        return -DB_CAP;
    }
    if den <= 0.0 {
        return DB_CAP;
    }
    (10.0 * (num / den).log10()).clamp(-DB_CAP, DB_CAP)
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

/// Magnitude-spectrogram SNR in dB, clamped to ±100.
pub fn spectral_snr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_len(reference, estimate)?;
    let plan = StftPlan::new(StftConfig::default())?;
    let s = plan.forward(reference)?.magnitude();
    let e = plan.forward(estimate)?.magnitude();
    let signal: f64 = s.iter().map(|v| v * v).sum();
    let noise: f64 = s.iter().zip(e.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(to_db(signal, noise + SNR_EPS))
}

/// Rectangular-window RMS envelope (512/256) of the peak-normalized signal.
pub fn rms_envelope(x: &[f64]) -> Vec<f64> {
    let x = peak_normalize(x);
    let frame = |s: &[f64]| (s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt();
    if x.len() < ENVELOPE_WINDOW {
        return vec![frame(&x)];
    }
    let n = (x.len() - ENVELOPE_WINDOW) / ENVELOPE_HOP + 1;
    (0..n)
        .map(|i| frame(&x[i * ENVELOPE_HOP..i * ENVELOPE_HOP + ENVELOPE_WINDOW]))
        .collect()
}

/// RMS difference between the envelopes of the peak-normalized signals.
pub fn rms_env_distance(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_len(reference, estimate)?;
    let a = rms_envelope(reference);
    let b = rms_envelope(estimate);
    let mse = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(mse.sqrt())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Signal-to-interference ratio of `estimate` against `references[target]`.
///
/// The estimate is projected onto the span of all references; the part
/// along the target reference is signal, the rest of the projection is
/// interference.
pub fn sir(estimate: &[f64], references: &[&[f64]], target: usize) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::Empty("reference list"));
    }
    if target >= references.len() {
        return Err(Error::InvalidParameter(format!(
            "target index {target} out of range for {} references",
            references.len()
        )));
    }
    for r in references {
        check_len(estimate, r)?;
    }
    let k = references.len();
    let mut gram = DMatrix::from_fn(k, k, |i, j| dot(references[i], references[j]));
    let max_diag = (0..k).map(|i| gram[(i, i)]).fold(0.0_f64, f64::max);
    for i in 0..k {
        gram[(i, i)] += GRAM_RIDGE;
    }
    let chol = gram.cholesky().ok_or(Error::DegenerateGram { min_pivot: 0.0 })?;
    let min_pivot = chol
        .l()
        .diagonal()
        .iter()
        .map(|v| v * v)
        .fold(f64::INFINITY, f64::min);
    if max_diag <= 0.0 || min_pivot < GRAM_MIN_PIVOT * max_diag {
        return Err(Error::DegenerateGram {
            min_pivot: if max_diag > 0.0 { min_pivot / max_diag } else { 0.0 },
        });
    }
    let rhs = DVector::from_fn(k, |i, _| dot(references[i], estimate));
    let coeffs = chol.solve(&rhs);

    let tref = references[target];
    let scale = rhs[target] / dot(tref, tref);
    let mut target_energy = 0.0;
    let mut interf_energy = 0.0;
    for n in 0..estimate.len() {
        let s_target = scale * tref[n];
        let proj: f64 = (0..k).map(|j| coeffs[j] * references[j][n]).sum();
        target_energy += s_target * s_target;
        interf_energy += (proj - s_target) * (proj - s_target);
    }
    Ok(to_db(target_energy, interf_energy))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceMetrics {
    pub spectral_snr_db: f64,
    pub rms_env_distance: f64,
    pub sir_db: f64,
}

impl SourceMetrics {
    pub fn is_finite(&self) -> bool {
        self.spectral_snr_db.is_finite() && self.rms_env_distance.is_finite() && self.sir_db.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sources: Vec<SourceMetrics>,
    pub mean: SourceMetrics,
}

/// Scores estimate `i` against reference `i` for every source.
pub fn evaluate(estimates: &[&[f64]], references: &[&[f64]]) -> Result<MetricsReport> {
    if references.is_empty() {
        return Err(Error::Empty("reference list"));
    }
    if estimates.len() != references.len() {
        return Err(Error::LengthMismatch {
            expected: references.len(),
            actual: estimates.len(),
        });
    }
    let sources = estimates
        .iter()
        .zip(references)
        .enumerate()
        .map(|(i, (e, r))| {
            Ok(SourceMetrics {
                spectral_snr_db: spectral_snr(r, e)?,
                rms_env_distance: rms_env_distance(r, e)?,
                sir_db: sir(e, references, i)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = sources.len() as f64;
    let mean = SourceMetrics {
        spectral_snr_db: sources.iter().map(|s| s.spectral_snr_db).sum::<f64>() / n,
        rms_env_distance: sources.iter().map(|s| s.rms_env_distance).sum::<f64>() / n,
        sir_db: sources.iter().map(|s| s.sir_db).sum::<f64>() / n,
    };
    Ok(MetricsReport { sources, mean })
}
