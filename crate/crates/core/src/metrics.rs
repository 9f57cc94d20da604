//! NMSE figures of merit and the closed-form shaking-hand cost predictions.

use ndarray::ArrayView1;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::CMatrix;

/// Eigenvalue NMSE: sum of |lambda_true - lambda_est|^2 over the true
/// spectrum's squared norm.
pub fn nmse_evd(true_eigs: &[f64], est_eigs: &[f64]) -> Result<f64> {
    if true_eigs.is_empty() || true_eigs.len() != est_eigs.len() {
        return Err(Error::Parameter(format!(
            "spectra must share a positive length, got {} and {}",
            true_eigs.len(),
            est_eigs.len()
        )));
    }
    let denom: f64 = true_eigs.iter().map(|l| l * l).sum();
    if denom <= 0.0 {
        return Err(Error::Parameter(
            "true spectrum has zero norm, NMSE is undefined".into(),
        ));
    }
    let num: f64 = true_eigs
        .iter()
        .zip(est_eigs)
        .map(|(t, e)| (t - e) * (t - e))
        .sum();
    Ok(num / denom)
}

/// Singular-vector NMSE: (1/2) sum over components of the u- and v-side
/// squared distances, each normalized by the true column's squared norm.
///
/// Every estimated column is first rotated by the unit phase of its overlap
/// with the matching true column; singular vectors are only defined up to
/// such a phase, and without the rotation the metric would be meaningless
/// for complex data.
pub fn nmse_svd(
    true_u: &CMatrix,
    true_v: &CMatrix,
    est_u: &CMatrix,
    est_v: &CMatrix,
) -> Result<f64> {
    let p = true_u.ncols();
    if p == 0 {
        return Err(Error::Parameter(
            "need at least one component column".into(),
        ));
    }
    if est_u.dim() != true_u.dim() || est_v.dim() != true_v.dim() || true_v.ncols() != p {
        return Err(Error::Parameter(format!(
            "column blocks disagree: U {:?} vs {:?}, V {:?} vs {:?}",
            true_u.dim(),
            est_u.dim(),
            true_v.dim(),
            est_v.dim()
        )));
    }
    let mut total = 0.0;
    for j in 0..p {
        total += aligned_error(true_u.column(j), est_u.column(j))?;
        total += aligned_error(true_v.column(j), est_v.column(j))?;
    }
    Ok(0.5 * total)
}

/// Squared distance to the truth after the optimal unit-phase rotation of
/// the estimate, over the true squared norm. An estimate orthogonal to the
/// truth gains nothing from rotating and keeps phase 1.
fn aligned_error(truth: ArrayView1<'_, Complex64>, est: ArrayView1<'_, Complex64>) -> Result<f64> {
    let denom: f64 = truth.iter().map(|z| z.norm_sqr()).sum();
    if denom <= 0.0 {
        return Err(Error::Parameter(
            "true vector column has zero norm".into(),
        ));
    }
    let overlap: Complex64 = est.iter().zip(truth.iter()).map(|(e, t)| e.conj() * t).sum();
    let phase = if overlap.norm() > 0.0 {
        overlap / overlap.norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    let dist: f64 = est
        .iter()
        .zip(truth.iter())
        .map(|(e, t)| (phase * e - t).norm_sqr())
        .sum();
    Ok(dist / denom)
}

/// Algorithm variant plus its per-session gossip budget, selecting one of
/// the four closed-form shaking-hand counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandshakePlan {
    SequentialEvd { k: u64 },
    ParallelEvd { k: u64 },
    SequentialSvd { k1: u64, k2: u64 },
    ParallelSvd { k1: u64, k2: u64 },
}

/// Exact gossip-round count for a full run. Every power iteration plus the
/// final normalization pass opens one K-round session per node set, so the
/// per-sweep budget multiplies (l* + 1); the sequential variants repeat the
/// whole schedule once per component.
pub fn predicted_handshakes(plan: HandshakePlan, components: u64, power_iters: u64) -> u64 {
    let sessions = power_iters + 1;
    match plan {
        HandshakePlan::SequentialEvd { k } => components * k * sessions,
        HandshakePlan::ParallelEvd { k } => k * sessions,
        HandshakePlan::SequentialSvd { k1, k2 } => components * (k1 + k2) * sessions,
        HandshakePlan::ParallelSvd { k1, k2 } => (k1 + k2) * sessions,
    }
}
