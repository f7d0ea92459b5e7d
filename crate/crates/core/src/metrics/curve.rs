//! Dental arch curves: cubic B-splines interpolating per-tooth landmarks,
//! and curve distances between them.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::{geometric_center, Jaw, JawModel, ToothMesh, Vec3};

pub const DEGREE: usize = 3;
pub const DEFAULT_CURVE_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct ArchCurve {
    pub jaw: Jaw,
    /// Landmarks in arch order.
    pub landmarks: Vec<Vec3>,
    /// Chord-length parameter of each landmark, `0..=1`.
    pub params: Vec<f64>,
    pub knots: Vec<f64>,
    pub control: Vec<Vec3>,
    /// Points at uniformly spaced parameters.
    pub samples: Vec<Vec3>,
}

/// Values of all `n` degree-3 basis functions at `u`.
fn basis(knots: &[f64], n: usize, u: f64) -> Vec<f64> {
    let m = knots.len() - 1;
    // degree-0 functions; the last non-empty span also takes u = 1
    let last_span = (0..m).rev().find(|&i| knots[i] < knots[i + 1]).expect("non-degenerate knots");
    let mut b: Vec<f64> = (0..m)
        .map(|i| {
            let inside = knots[i] <= u && u < knots[i + 1];
            (inside || (i == last_span && u == knots[i + 1])) as u8 as f64
        })
        .collect();
    for p in 1..=DEGREE {
        for i in 0..m - p {
            let left = if knots[i + p] > knots[i] { (u - knots[i]) / (knots[i + p] - knots[i]) * b[i] } else { 0.0 };
            let right = if knots[i + p + 1] > knots[i + 1] {
                (knots[i + p + 1] - u) / (knots[i + p + 1] - knots[i + 1]) * b[i + 1]
            } else {
                0.0
            };
            b[i] = left + right;
        }
    }
    b.truncate(n);
    b
}

impl ArchCurve {
    /// Interpolates `landmarks` (at least four, consecutive ones distinct)
    /// and samples the curve at `n_samples` uniform parameters.
    pub fn interpolate(jaw: Jaw, landmarks: Vec<Vec3>, n_samples: usize) -> Result<Self> {
        let n = landmarks.len();
        if n < DEGREE + 1 {
            return Err(Error::Config(format!("an arch curve needs at least 4 landmarks, got {n}")));
        }
        if n_samples < 2 {
            return Err(Error::Config("an arch curve needs at least 2 samples".into()));
        }
        let chords: Vec<f64> = landmarks.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
        let total: f64 = chords.iter().sum();
        if chords.iter().any(|&c| !(c > 1e-12 * total.max(1.0))) {
            return Err(Error::Numerical("coincident consecutive landmarks".into()));
        }
        let mut params = Vec::with_capacity(n);
        let mut acc = 0.0;
        params.push(0.0);
        for c in &chords[..n - 1] {
            acc += c;
            params.push(acc / total);
        }
        params[n - 1] = 1.0;

        let mut knots = vec![0.0; DEGREE + 1];
        for j in 1..n - DEGREE {
            knots.push(params[j..j + DEGREE].iter().sum::<f64>() / DEGREE as f64);
        }
        knots.extend([1.0; DEGREE + 1]);

        let mut a = DMatrix::zeros(n, n);
        for (k, &u) in params.iter().enumerate() {
            for (i, v) in basis(&knots, n, u).into_iter().enumerate() {
                a[(k, i)] = v;
            }
        }
        let rhs = DMatrix::from_fn(n, 3, |k, c| landmarks[k][c]);
        let sol = a.lu().solve(&rhs).ok_or_else(|| Error::Numerical("singular spline interpolation system".into()))?;
        let control = (0..n).map(|i| Vec3::new(sol[(i, 0)], sol[(i, 1)], sol[(i, 2)])).collect();
        let mut curve = ArchCurve { jaw, landmarks, params, knots, control, samples: Vec::new() };
        curve.samples = (0..n_samples).map(|s| curve.eval(s as f64 / (n_samples - 1) as f64)).collect();
        Ok(curve)
    }

    /// Curve point at parameter `u ∈ [0, 1]`.
    pub fn eval(&self, u: f64) -> Vec3 {
        let u = u.clamp(0.0, 1.0);
        basis(&self.knots, self.control.len(), u).iter().zip(&self.control).map(|(b, c)| c * *b).sum()
    }
}

/// Labels of `jaw` in arch order with their meshes.
fn arch_order(model: &JawModel, jaw: Jaw) -> Vec<&ToothMesh> {
    let mut teeth: Vec<&ToothMesh> = model.teeth.values().filter(|m| m.label.jaw() == jaw).collect();
    teeth.sort_by_key(|m| m.label.arch_order_key());
    teeth
}

/// Arch curve through landmarks picked by `landmark`.
pub fn arch_curve_with(
    model: &JawModel,
    jaw: Jaw,
    n_samples: usize,
    landmark: impl Fn(&ToothMesh) -> Result<Vec3>,
) -> Result<ArchCurve> {
    let landmarks = arch_order(model, jaw).into_iter().map(landmark).collect::<Result<Vec<_>>>()?;
    ArchCurve::interpolate(jaw, landmarks, n_samples)
}

/// Arch curve through the tooth geometric centers.
pub fn arch_curve(model: &JawModel, jaw: Jaw, n_samples: usize) -> Result<ArchCurve> {
    arch_curve_with(model, jaw, n_samples, geometric_center)
}

/// Discrete Fréchet distance between two polylines.
pub fn discrete_frechet(a: &[Vec3], b: &[Vec3]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut prev = vec![0.0f64; b.len()];
    let mut cur = vec![0.0; b.len()];
    for (i, p) in a.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            let d = (p - q).norm();
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => cur[j - 1].max(d),
                (_, 0) => prev[0].max(d),
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]).max(d),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len() - 1]
}

/// Symmetric Hausdorff distance between two point sets.
pub fn hausdorff(a: &[Vec3], b: &[Vec3]) -> f64 {
    let one_sided = |x: &[Vec3], y: &[Vec3]| {
        x.iter().map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max)
    };
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    one_sided(a, b).max(one_sided(b, a))
}

/// Fréchet distance between the arch curves of `pred` and `gt`, averaged
/// over the jaws present in the ground truth.
pub fn fd_cur_metric(pred: &JawModel, gt: &JawModel, n_samples: usize) -> Result<f64> {
    let jaws: Vec<Jaw> = [Jaw::Upper, Jaw::Lower].into_iter().filter(|&j| gt.has_jaw(j)).collect();
    if jaws.is_empty() {
        return Err(Error::InvalidMesh("ground truth has no teeth".into()));
    }
    let mut sum = 0.0;
    for &jaw in &jaws {
        if !pred.has_jaw(jaw) {
            return Err(Error::InvalidMesh(format!("prediction lacks the {jaw} jaw")));
        }
        let a = arch_curve(pred, jaw, n_samples)?;
        let b = arch_curve(gt, jaw, n_samples)?;
        sum += discrete_frechet(&a.samples, &b.samples);
    }
    Ok(sum / jaws.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wavy(n: usize) -> Vec<Vec3> {
        (0..n).map(|i| Vec3::new(i as f64 * 3.0, (i as f64 * 0.8).sin() * 5.0, (i as f64).cos())).collect()
    }

    #[test]
    fn interpolates_landmarks() {
        let c = ArchCurve::interpolate(Jaw::Upper, wavy(9), 50).unwrap();
        for (u, l) in c.params.iter().zip(&c.landmarks) {
            assert!((c.eval(*u) - l).norm() < 1e-9);
        }
        assert_eq!(c.samples[0], c.landmarks[0]);
        assert!((c.samples[49] - c.landmarks[8]).norm() < 1e-12);
    }

    #[test]
    fn basis_partition_of_unity() {
        let c = ArchCurve::interpolate(Jaw::Lower, wavy(7), 10).unwrap();
        for k in 0..=20 {
            let s: f64 = basis(&c.knots, 7, k as f64 / 20.0).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_short_or_degenerate_input() {
        assert!(ArchCurve::interpolate(Jaw::Upper, wavy(3), 10).is_err());
        let mut l = wavy(5);
        l[2] = l[1];
        assert!(ArchCurve::interpolate(Jaw::Upper, l, 10).is_err());
    }

    #[test]
    fn frechet_of_parallel_lines() {
        let a: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let b: Vec<Vec3> = a.iter().map(|p| p + Vec3::new(0.0, 0.0, 0.5)).collect();
        assert!((discrete_frechet(&a, &b) - 0.5).abs() < 1e-15);
        assert_eq!(discrete_frechet(&a, &a), 0.0);
    }
}
