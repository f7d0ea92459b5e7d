use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::Array2;

use super::{geometric_center, JawModel, Mat3, Mat4, ToothLabel, ToothMesh, Vec3};
use crate::error::{Error, Result};

/// Below this angle the Rodrigues coefficients switch to their Taylor limits.
const SMALL_ANGLE: f64 = 1e-6;
/// Below this angle the coefficient derivatives switch to series.
const SMALL_ANGLE_DERIV: f64 = 1e-3;

/// Skew-symmetric cross-product matrix.
pub fn hat(r: &Vec3) -> Mat3 {
    Mat3::new(0.0, -r.z, r.y, r.z, 0.0, -r.x, -r.y, r.x, 0.0)
}

fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// `sin θ / θ` and `(1 - cos θ) / θ²`.
fn rodrigues_coefficients(theta: f64) -> (f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    }
}

/// Rotation matrix of an axis-angle vector (radians).
pub fn so3_exp(r: &Vec3) -> Mat3 {
    let theta = r.norm();
    let (a, b) = rodrigues_coefficients(theta);
    let k = hat(r);
    Mat3::identity() + k * a + k * k * b
}

/// Homogeneous rigid transform `[[R, m], [0, 1]]` with `R = exp(hat(r))`.
pub fn se3_exp(r: &Vec3, m: &Vec3) -> Mat4 {
    let rot = so3_exp(r);
    let mut t = Mat4::identity();
    t.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
    t.fixed_view_mut::<3, 1>(0, 3).copy_from(m);
    t
}

/// Partial derivatives `∂R/∂r_i` of [`so3_exp`], together with `R`.
pub fn rotation_jacobians(r: &Vec3) -> (Mat3, [Mat3; 3]) {
    let theta = r.norm();
    let (a, b) = rodrigues_coefficients(theta);
    // (dA/dθ)/θ and (dB/dθ)/θ
    let (da, db) = if theta < SMALL_ANGLE_DERIV {
        let t2 = theta * theta;
        (-1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0, -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0)
    } else {
        let (s, c) = theta.sin_cos();
        let t3 = theta * theta * theta;
        ((theta * c - s) / t3, (theta * s - 2.0 * (1.0 - c)) / (t3 * theta))
    };
    let k = hat(r);
    let k2 = k * k;
    let rot = Mat3::identity() + k * a + k2 * b;
    let jac = std::array::from_fn(|i| {
        let e = hat(&Vec3::ith(i, 1.0));
        e * a + (e * k + k * e) * b + k * (da * r[i]) + k2 * (db * r[i])
    });
    (rot, jac)
}

/// Axis-angle vector of a rotation matrix, with norm in `[0, π]`.
pub fn so3_log(rot: &Mat3) -> Vec3 {
    let cos = ((rot.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let skew = vee(&(rot - rot.transpose())) * 0.5; // sin θ · axis
    let theta = skew.norm().atan2(cos);
    if theta < 1e-4 {
        return skew * (1.0 + theta * theta / 6.0);
    }
    if PI - theta > 1e-3 {
        return skew * (theta / theta.sin());
    }
    // Near π the antisymmetric part vanishes; read the axis off the
    // symmetric part (R + Rᵀ)/2 = cos θ I + (1 - cos θ) a aᵀ.
    let sym = (rot + rot.transpose()) * 0.5;
    let aat = (sym - Mat3::identity() * cos) / (1.0 - cos);
    let col = (0..3).max_by(|&i, &j| aat[(i, i)].total_cmp(&aat[(j, j)])).unwrap_or(0);
    let mut axis: Vec3 = aat.column(col).into();
    axis /= axis.norm();
    if axis.dot(&skew) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Maps an axis-angle vector to the equivalent one with norm in `[0, π)`.
pub fn canonicalize_axis_angle(r: &Vec3) -> Vec3 {
    let theta = r.norm();
    if theta < PI {
        return *r;
    }
    let axis = r / theta;
    let wrapped = theta.rem_euclid(2.0 * PI);
    if wrapped < PI {
        axis * wrapped
    } else {
        -axis * (2.0 * PI - wrapped)
    }
}

/// Rigidly moves a tooth: `v ↦ R (v − pivot) + pivot + m`.
pub fn apply_transform(mesh: &ToothMesh, t: &Mat4, pivot: &Vec3) -> ToothMesh {
    let rot: Mat3 = t.fixed_view::<3, 3>(0, 0).into();
    let m: Vec3 = t.fixed_view::<3, 1>(0, 3).into();
    let mut out = mesh.clone();
    if rot == Mat3::identity() && m == Vec3::zeros() {
        return out;
    }
    for v in &mut out.vertices {
        *v = rot * (*v - pivot) + pivot + m;
    }
    out
}

/// Per-tooth 6-DoF parameters `(m, r)`: translation in mm, then
/// axis-angle rotation in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformParams {
    pub per_tooth: BTreeMap<ToothLabel, [f64; 6]>,
}

impl TransformParams {
    pub fn zeros(labels: &[ToothLabel]) -> Self {
        TransformParams { per_tooth: labels.iter().map(|&l| (l, [0.0; 6])).collect() }
    }

    pub fn labels(&self) -> Vec<ToothLabel> {
        self.per_tooth.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.per_tooth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_tooth.is_empty()
    }

    pub fn translation(&self, label: ToothLabel) -> Option<Vec3> {
        self.per_tooth.get(&label).map(|z| Vec3::new(z[0], z[1], z[2]))
    }

    pub fn rotation(&self, label: ToothLabel) -> Option<Vec3> {
        self.per_tooth.get(&label).map(|z| Vec3::new(z[3], z[4], z[5]))
    }

    /// `|K| × 6` matrix with rows in ascending label order.
    pub fn stacked(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.per_tooth.len(), 6));
        for (row, z) in self.per_tooth.values().enumerate() {
            for (c, v) in z.iter().enumerate() {
                out[(row, c)] = *v;
            }
        }
        out
    }

    /// Inverse of [`stacked`](Self::stacked); rotation parts are
    /// canonicalized to norm < π.
    pub fn from_stacked(labels: &[ToothLabel], z: &Array2<f64>) -> Result<Self> {
        if z.nrows() != labels.len() || z.ncols() != 6 {
            return Err(Error::Shape(format!(
                "expected {}x6 parameters, got {}x{}",
                labels.len(),
                z.nrows(),
                z.ncols()
            )));
        }
        let mut sorted = labels.to_vec();
        sorted.sort();
        if sorted != labels {
            return Err(Error::Shape("labels must be in ascending order".into()));
        }
        let per_tooth = labels
            .iter()
            .enumerate()
            .map(|(row, &l)| {
                let r = canonicalize_axis_angle(&Vec3::new(z[(row, 3)], z[(row, 4)], z[(row, 5)]));
                (l, [z[(row, 0)], z[(row, 1)], z[(row, 2)], r.x, r.y, r.z])
            })
            .collect();
        Ok(TransformParams { per_tooth })
    }

    pub fn transform(&self, label: ToothLabel) -> Option<Mat4> {
        Some(se3_exp(&self.rotation(label)?, &self.translation(label)?))
    }
}

/// Applies per-tooth transforms, each about the tooth's own geometric center.
pub fn align(model: &JawModel, params: &TransformParams) -> Result<JawModel> {
    let mut teeth = BTreeMap::new();
    for (label, mesh) in &model.teeth {
        let t = params
            .transform(*label)
            .ok_or_else(|| Error::LabelMismatch { missing_in_pred: vec![*label], missing_in_gt: vec![] })?;
        let pivot = geometric_center(mesh)?;
        teeth.insert(*label, apply_transform(mesh, &t, &pivot));
    }
    if params.len() != model.len() {
        let extra: Vec<ToothLabel> = params.labels().into_iter().filter(|l| !model.teeth.contains_key(l)).collect();
        return Err(Error::LabelMismatch { missing_in_pred: vec![], missing_in_gt: extra });
    }
    JawModel::from_map(model.sample_id.clone(), teeth)
}
