//! Corresponding-vertex distances, before and after global rigid registration.

use nalgebra::SVD;

use crate::error::{Error, Result};
use crate::geometry::{JawModel, Mat3, Vec3};

/// Ratio of smallest to largest singular value below which the
/// cross-covariance is treated as rank deficient.
const RANK_TOLERANCE: f64 = 1e-12;

fn paired_vertices<'a>(pred: &'a JawModel, gt: &'a JawModel) -> Result<Vec<(&'a Vec3, &'a Vec3)>> {
    pred.check_same_labels(gt)?;
    let mut pairs = Vec::with_capacity(pred.vertex_count());
    for (label, p) in &pred.teeth {
        let g = &gt.teeth[label];
        if p.vertices.len() != g.vertices.len() {
            return Err(Error::Shape(format!(
                "tooth {label}: {} predicted vertices vs {} ground-truth vertices",
                p.vertices.len(),
                g.vertices.len()
            )));
        }
        pairs.extend(p.vertices.iter().zip(&g.vertices));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidMesh("no vertices to compare".into()));
    }
    Ok(pairs)
}

fn mean_distance<'a>(pairs: impl ExactSizeIterator<Item = (Vec3, &'a Vec3)>) -> f64 {
    let n = pairs.len() as f64;
    pairs.map(|(p, q)| (p - q).norm()).sum::<f64>() / n
}

/// Mean Euclidean distance between corresponding vertices.
pub fn add_metric(pred: &JawModel, gt: &JawModel) -> Result<f64> {
    let pairs = paired_vertices(pred, gt)?;
    Ok(mean_distance(pairs.iter().map(|(p, q)| (**p, *q))))
}

/// A rigid map `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Registration {
    pub transform: RigidTransform,
    /// The cross-covariance was rank deficient and only the centroids were
    /// matched.
    pub translation_only: bool,
}

/// Least-squares rigid transform taking `src` onto `dst` (Kabsch).
pub fn kabsch(src: &[Vec3], dst: &[Vec3]) -> Result<Registration> {
    if src.len() != dst.len() || src.is_empty() {
        return Err(Error::Shape(format!("registration of {} onto {} points", src.len(), dst.len())));
    }
    let n = src.len() as f64;
    let cs: Vec3 = src.iter().sum::<Vec3>() / n;
    let cd: Vec3 = dst.iter().sum::<Vec3>() / n;
    let mut h = Mat3::zeros();
    for (p, q) in src.iter().zip(dst) {
        h += (p - cs) * (q - cd).transpose();
    }
    let svd = SVD::new(h, true, true);
    let s = svd.singular_values;
    let s_max = s.max();
    if !(s_max > 0.0) || s.min() <= RANK_TOLERANCE * s_max {
        return Ok(Registration {
            transform: RigidTransform { rotation: Mat3::identity(), translation: cd - cs },
            translation_only: true,
        });
    }
    let u = svd.u.expect("computed");
    let v = svd.v_t.expect("computed").transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    Ok(Registration {
        transform: RigidTransform { rotation, translation: cd - rotation * cs },
        translation_only: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaAdd {
    pub value: f64,
    pub registration: Registration,
}

/// ADD after one rigid registration of the whole prediction onto the
/// ground truth.
pub fn pa_add_metric(pred: &JawModel, gt: &JawModel) -> Result<PaAdd> {
    let pairs = paired_vertices(pred, gt)?;
    let src: Vec<Vec3> = pairs.iter().map(|(p, _)| **p).collect();
    let dst: Vec<Vec3> = pairs.iter().map(|(_, q)| **q).collect();
    let registration = kabsch(&src, &dst)?;
    let value = mean_distance(src.iter().map(|p| registration.transform.apply(p)).zip(&dst));
    Ok(PaAdd { value, registration })
}
