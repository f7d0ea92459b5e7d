use std::collections::BTreeMap;

use super::{Jaw, ToothLabel, Vec3};
use crate::error::{Error, Result};

/// Faces per patch of the built-in patch hierarchy.
pub const DEFAULT_PATCH_SIZE: usize = 64;

/// A labeled triangle mesh of a single tooth, in mm.
///
/// Faces are stored in patch order: patch `p` is the contiguous run
/// `faces[p * patch_size..(p + 1) * patch_size]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToothMesh {
    pub label: ToothLabel,
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    patch_size: usize,
}

impl ToothMesh {
    pub fn new(label: ToothLabel, vertices: Vec<Vec3>, faces: Vec<[usize; 3]>, patch_size: usize) -> Result<Self> {
        if patch_size == 0 {
            return Err(Error::InvalidMesh("patch size must be positive".into()));
        }
        if !faces.len().is_multiple_of(patch_size) {
            return Err(Error::InvalidMesh(format!(
                "tooth {label}: {} faces do not split into patches of {patch_size}",
                faces.len()
            )));
        }
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= vertices.len()) {
                return Err(Error::InvalidMesh(format!("tooth {label}: face {fi} references a vertex out of range")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("tooth {label}: face {fi} repeats a vertex")));
            }
        }
        Ok(ToothMesh { label, vertices, faces, patch_size })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn n_patches(&self) -> usize {
        self.faces.len() / self.patch_size
    }

    pub fn patch_faces(&self, patch: usize) -> &[[usize; 3]] {
        &self.faces[patch * self.patch_size..(patch + 1) * self.patch_size]
    }

    pub fn corners(&self, face: usize) -> [Vec3; 3] {
        let f = self.faces[face];
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.corners(face);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn geometric_center(&self) -> Result<Vec3> {
        geometric_center(self)
    }

    /// Returns a copy with every vertex moved by `offset`.
    pub fn translated(&self, offset: &Vec3) -> ToothMesh {
        let mut out = self.clone();
        for v in &mut out.vertices {
            *v += offset;
        }
        out
    }
}

/// Arithmetic mean of the vertices.
pub fn geometric_center(mesh: &ToothMesh) -> Result<Vec3> {
    if mesh.vertices.is_empty() {
        return Err(Error::DegenerateTooth { label: mesh.label, reason: "mesh has no vertices".into() });
    }
    let sum = mesh.vertices.iter().fold(Vec3::zeros(), |acc, v| acc + v);
    Ok(sum / mesh.vertices.len() as f64)
}

/// The full set of tooth meshes of one dental model (both jaws).
#[derive(Debug, Clone, PartialEq)]
pub struct JawModel {
    pub sample_id: String,
    pub teeth: BTreeMap<ToothLabel, ToothMesh>,
}

impl JawModel {
    pub fn new(sample_id: impl Into<String>, teeth: Vec<ToothMesh>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for t in teeth {
            let label = t.label;
            if map.insert(label, t).is_some() {
                return Err(Error::InvalidMesh(format!("duplicate tooth label {label}")));
            }
        }
        Self::from_map(sample_id, map)
    }

    pub fn from_map(sample_id: impl Into<String>, teeth: BTreeMap<ToothLabel, ToothMesh>) -> Result<Self> {
        if teeth.is_empty() || teeth.len() > 32 {
            return Err(Error::InvalidMesh(format!("a dental model holds 1..=32 teeth, got {}", teeth.len())));
        }
        for (k, t) in &teeth {
            if *k != t.label {
                return Err(Error::InvalidMesh(format!("tooth stored under {k} is labeled {}", t.label)));
            }
        }
        Ok(JawModel { sample_id: sample_id.into(), teeth })
    }

    pub fn len(&self) -> usize {
        self.teeth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.teeth.is_empty()
    }

    /// Labels in ascending FDI order.
    pub fn labels(&self) -> Vec<ToothLabel> {
        self.teeth.keys().copied().collect()
    }

    pub fn tooth(&self, label: ToothLabel) -> Option<&ToothMesh> {
        self.teeth.get(&label)
    }

    /// Per-tooth geometric centers in ascending label order.
    pub fn centers(&self) -> Result<Vec<Vec3>> {
        self.teeth.values().map(geometric_center).collect()
    }

    pub fn vertex_count(&self) -> usize {
        self.teeth.values().map(|t| t.vertices.len()).sum()
    }

    /// Mean of all vertices of all teeth.
    pub fn centroid(&self) -> Vec3 {
        let n = self.vertex_count().max(1) as f64;
        self.teeth.values().flat_map(|t| t.vertices.iter()).fold(Vec3::zeros(), |acc, v| acc + v) / n
    }

    /// Moves the model so the mean of all vertices sits at the origin.
    /// Returns the offset that was added to every vertex.
    pub fn normalize(&mut self) -> Vec3 {
        let offset = -self.centroid();
        for t in self.teeth.values_mut() {
            for v in &mut t.vertices {
                *v += offset;
            }
        }
        offset
    }

    pub fn has_jaw(&self, jaw: Jaw) -> bool {
        self.teeth.keys().any(|l| l.jaw() == jaw)
    }

    /// Checks that `other` has the same labels as `self`.
    pub fn check_same_labels(&self, other: &JawModel) -> Result<()> {
        let missing_in_pred: Vec<ToothLabel> =
            other.teeth.keys().filter(|k| !self.teeth.contains_key(k)).copied().collect();
        let missing_in_gt: Vec<ToothLabel> =
            self.teeth.keys().filter(|k| !other.teeth.contains_key(k)).copied().collect();
        if missing_in_pred.is_empty() && missing_in_gt.is_empty() {
            Ok(())
        } else {
            Err(Error::LabelMismatch { missing_in_pred, missing_in_gt })
        }
    }
}
