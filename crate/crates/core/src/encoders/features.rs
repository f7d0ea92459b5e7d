//! Per-face and per-patch geometric features.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geometry::{ToothMesh, Vec3};

/// Face center offset (3), unit normal (3), three corner offsets (9).
pub const FACE_FEATURES: usize = 15;
/// Corner coordinates per face, reconstructed by the masked decoder.
pub const FACE_CORNERS: usize = 9;
/// Multiplies intra-patch lengths (mm) so features are O(1).
pub const LOCAL_SCALE: f64 = 0.25;
/// Multiplies absolute positions (mm) before positional embeddings.
pub const POSITION_SCALE: f64 = 0.05;

/// Patch geometry of one tooth.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatures {
    /// `n_patches × (P · 15)`, faces in patch order.
    pub features: Array2<f64>,
    /// `n_patches × (P · 9)`: corner coordinates relative to the patch
    /// center, scaled like the features.
    pub corners: Array2<f64>,
    /// `n_patches × 3`, mm.
    pub centers: Array2<f64>,
}

fn unit_normal(c: &[Vec3; 3]) -> Vec3 {
    let n = (c[1] - c[0]).cross(&(c[2] - c[0]));
    let len = n.norm();
    if len > 0.0 {
        n / len
    } else {
        Vec3::zeros()
    }
}

pub fn patch_features(mesh: &ToothMesh) -> Result<PatchFeatures> {
    let n_patches = mesh.n_patches();
    if n_patches == 0 {
        return Err(Error::DegenerateTooth { label: mesh.label, reason: "no patches".into() });
    }
    let p = mesh.patch_size();
    let mut features = Array2::zeros((n_patches, p * FACE_FEATURES));
    let mut corners = Array2::zeros((n_patches, p * FACE_CORNERS));
    let mut centers = Array2::zeros((n_patches, 3));
    for patch in 0..n_patches {
        let first = patch * p;
        let face_corners: Vec<[Vec3; 3]> = (first..first + p).map(|f| mesh.corners(f)).collect();
        let face_centers: Vec<Vec3> = face_corners.iter().map(|c| (c[0] + c[1] + c[2]) / 3.0).collect();
        let center = face_centers.iter().sum::<Vec3>() / p as f64;
        for (f, (c, fc)) in face_corners.iter().zip(&face_centers).enumerate() {
            let mut row = features.row_mut(patch);
            let base = f * FACE_FEATURES;
            let off = (fc - center) * LOCAL_SCALE;
            let n = unit_normal(c);
            for a in 0..3 {
                row[base + a] = off[a];
                row[base + 3 + a] = n[a];
                for (j, corner) in c.iter().enumerate() {
                    row[base + 6 + 3 * j + a] = (corner[a] - fc[a]) * LOCAL_SCALE;
                }
            }
            let mut crow = corners.row_mut(patch);
            for (j, corner) in c.iter().enumerate() {
                for a in 0..3 {
                    crow[f * FACE_CORNERS + 3 * j + a] = (corner[a] - center[a]) * LOCAL_SCALE;
                }
            }
        }
        for a in 0..3 {
            centers[(patch, a)] = center[a];
        }
    }
    Ok(PatchFeatures { features, corners, centers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ToothLabel;

    fn tetra(offset: Vec3) -> ToothMesh {
        let v = vec![
            Vec3::new(0.0, 0.0, 0.0) + offset,
            Vec3::new(4.0, 0.0, 0.0) + offset,
            Vec3::new(0.0, 4.0, 0.0) + offset,
            Vec3::new(0.0, 0.0, 4.0) + offset,
        ];
        let f = vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]];
        ToothMesh::new(ToothLabel::new(11).unwrap(), v, f, 2).unwrap()
    }

    #[test]
    fn layout_matches_hand_computation() {
        let pf = patch_features(&tetra(Vec3::zeros())).unwrap();
        assert_eq!(pf.features.dim(), (2, 30));
        assert_eq!(pf.corners.dim(), (2, 18));
        // face 0 = (0,2,1): center (4/3, 4/3, 0), normal −z
        // patch 0 = faces 0 and 1, center ((4/3,4/3,0) + (4/3,0,4/3)) / 2
        let center = Vec3::new(4.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0);
        assert!((pf.centers[(0, 0)] - center.x).abs() < 1e-12);
        let row = pf.features.row(0);
        let off = (Vec3::new(4.0 / 3.0, 4.0 / 3.0, 0.0) - center) * LOCAL_SCALE;
        for a in 0..3 {
            assert!((row[a] - off[a]).abs() < 1e-12);
        }
        assert_eq!([row[3], row[4], row[5]], [0.0, 0.0, -1.0]);
        // first corner of face 0 is the origin
        assert!((row[6] - (0.0 - 4.0 / 3.0) * LOCAL_SCALE).abs() < 1e-12);
    }

    #[test]
    fn features_are_translation_invariant_but_centers_move() {
        let a = patch_features(&tetra(Vec3::zeros())).unwrap();
        let b = patch_features(&tetra(Vec3::new(10.0, 0.0, 0.0))).unwrap();
        assert!((&a.features - &b.features).iter().all(|d| d.abs() < 1e-12));
        assert!((b.centers[(0, 0)] - a.centers[(0, 0)] - 10.0).abs() < 1e-12);
    }
}
