//! Metrics on the predicted transformation parameters.

use crate::error::{Error, Result};
use crate::geometry::{so3_exp, TransformParams};

fn paired(pred: &TransformParams, gt: &TransformParams) -> Result<Vec<([f64; 6], [f64; 6])>> {
    if pred.labels() != gt.labels() {
        let p = pred.labels();
        let g = gt.labels();
        return Err(Error::LabelMismatch {
            missing_in_pred: g.iter().filter(|l| !p.contains(l)).copied().collect(),
            missing_in_gt: p.iter().filter(|l| !g.contains(l)).copied().collect(),
        });
    }
    Ok(pred.per_tooth.values().copied().zip(gt.per_tooth.values().copied()).collect())
}

/// Cosine similarity of two 6-vectors. Two zero vectors agree (1), a zero
/// vector against a nonzero one scores 0.
pub fn cosine_similarity(a: &[f64; 6], b: &[f64; 6]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            (dot / (na * nb)).clamp(-1.0, 1.0)
        }
    }
}

/// Mean per-tooth cosine similarity of the stacked parameter rows.
pub fn csa_metric(pred: &TransformParams, gt: &TransformParams) -> Result<f64> {
    let pairs = paired(pred, gt)?;
    if pairs.is_empty() {
        return Ok(1.0);
    }
    Ok(pairs.iter().map(|(p, g)| cosine_similarity(p, g)).sum::<f64>() / pairs.len() as f64)
}

/// Fraction of teeth whose cosine similarity reaches `threshold`.
pub fn csa_accuracy(pred: &TransformParams, gt: &TransformParams, threshold: f64) -> Result<f64> {
    let pairs = paired(pred, gt)?;
    if pairs.is_empty() {
        return Ok(1.0);
    }
    let hits = pairs.iter().filter(|(p, g)| cosine_similarity(p, g) >= threshold).count();
    Ok(hits as f64 / pairs.len() as f64)
}

/// Geodesic angle between two rotation vectors, degrees.
///
/// Evaluated as `atan2(sin θ, cos θ)` with `cos θ = (tr(R_a R_bᵀ) − 1)/2`
/// and `sin θ` from the skew part, which equals the clamped arccos of the
/// trace formula but keeps full precision near 0 and π.
pub fn rotation_error_deg(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let r = so3_exp(&(*a).into()) * so3_exp(&(*b).into()).transpose();
    let cos = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let sin = 0.5
        * ((r[(2, 1)] - r[(1, 2)]).powi(2) + (r[(0, 2)] - r[(2, 0)]).powi(2) + (r[(1, 0)] - r[(0, 1)]).powi(2)).sqrt();
    sin.atan2(cos).to_degrees()
}

/// Mean per-tooth geodesic rotation error, degrees.
pub fn me_rot_metric(pred: &TransformParams, gt: &TransformParams) -> Result<f64> {
    let pairs = paired(pred, gt)?;
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pairs.iter().map(|(p, g)| rotation_error_deg(&[p[3], p[4], p[5]], &[g[3], g[4], g[5]])).sum();
    Ok(sum / pairs.len() as f64)
}
