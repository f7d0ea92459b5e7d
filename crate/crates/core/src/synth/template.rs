//! Canonical tooth templates.
//!
//! Every template starts from a tetrahedron subdivided four times
//! (4 · 4⁴ = 1024 faces, 514 vertices). Faces are emitted depth first, so
//! the 64 descendants of each of the 16 first-level faces are contiguous:
//! that run is one patch of the built-in patch hierarchy.

use std::collections::HashMap;

use crate::geometry::Vec3;

pub const SUBDIVISION_LEVELS: u32 = 4;
/// Levels below the patch roots (64 = 4³ faces per patch).
pub const PATCH_LEVELS: u32 = 3;
pub const TEMPLATE_FACES: usize = 1024;
pub const TEMPLATE_PATCH_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToothKind {
    Incisor,
    Canine,
    Premolar,
    Molar,
}

impl ToothKind {
    pub fn from_position(position: u32) -> Self {
        match position {
            1 | 2 => ToothKind::Incisor,
            3 => ToothKind::Canine,
            4 | 5 => ToothKind::Premolar,
            _ => ToothKind::Molar,
        }
    }
}

/// Crown dimensions in mm: mesiodistal width, labiolingual depth, height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToothSize {
    pub width: f64,
    pub depth: f64,
    pub height: f64,
}

/// Typical crown sizes by FDI position (1..=8).
pub fn nominal_size(position: u32, upper: bool) -> ToothSize {
    let (w, d, h) = match (upper, position) {
        (true, 1) => (8.5, 7.0, 10.5),
        (true, 2) => (6.5, 6.0, 9.0),
        (true, 3) => (7.5, 8.0, 10.0),
        (true, 4) => (7.0, 9.0, 8.5),
        (true, 5) => (6.5, 9.0, 7.5),
        (true, 6) => (10.0, 11.0, 7.5),
        (true, 7) => (9.0, 11.0, 7.0),
        (true, _) => (8.5, 10.5, 6.5),
        (false, 1) => (5.4, 6.0, 9.0),
        (false, 2) => (5.9, 6.2, 9.5),
        (false, 3) => (6.9, 7.7, 11.0),
        (false, 4) => (7.0, 7.7, 8.5),
        (false, 5) => (7.1, 8.2, 8.0),
        (false, 6) => (11.0, 10.5, 7.5),
        (false, 7) => (10.5, 10.0, 7.0),
        (false, _) => (10.0, 9.5, 6.5),
    };
    ToothSize { width: w, depth: d, height: h }
}

/// Unit-sphere mesh with the depth-first patch ordering.
pub fn subdivided_sphere() -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let s = 1.0 / 3f64.sqrt();
    let mut vertices = vec![Vec3::new(s, s, s), Vec3::new(s, -s, -s), Vec3::new(-s, s, -s), Vec3::new(-s, -s, s)];
    // outward-facing winding
    let base = [[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
    let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
    let mut faces = Vec::with_capacity(TEMPLATE_FACES);
    for f in base {
        subdivide(f, SUBDIVISION_LEVELS, &mut vertices, &mut midpoints, &mut faces);
    }
    for v in &mut vertices {
        *v = v.normalize();
    }
    (vertices, faces)
}

fn subdivide(
    f: [usize; 3],
    depth: u32,
    vertices: &mut Vec<Vec3>,
    midpoints: &mut HashMap<(usize, usize), usize>,
    out: &mut Vec<[usize; 3]>,
) {
    if depth == 0 {
        out.push(f);
        return;
    }
    let mut mid = |a: usize, b: usize| {
        let key = (a.min(b), a.max(b));
        *midpoints.entry(key).or_insert_with(|| {
            vertices.push((vertices[a] + vertices[b]) * 0.5);
            vertices.len() - 1
        })
    };
    let ab = mid(f[0], f[1]);
    let bc = mid(f[1], f[2]);
    let ca = mid(f[2], f[0]);
    for child in [[f[0], ab, ca], [ab, f[1], bc], [ca, bc, f[2]], [ab, bc, ca]] {
        subdivide(child, depth - 1, vertices, midpoints, out);
    }
}

/// Deforms a unit-sphere point into the crown shape of `kind`, in the tooth
/// frame: x mesiodistal, y labiolingual (+ labial), z toward the occlusal
/// surface.
pub fn deform(p: &Vec3, kind: ToothKind, size: &ToothSize) -> Vec3 {
    let (a, b, h) = (size.width * 0.5, size.depth * 0.5, size.height * 0.5);
    let occlusal = p.z.max(0.0);
    let (x, y, z) = match kind {
        ToothKind::Incisor => {
            // blade narrowing toward the incisal edge
            let thin = 1.0 - 0.55 * occlusal;
            (a * p.x * (1.0 + 0.1 * occlusal), b * p.y * thin, h * p.z)
        }
        ToothKind::Canine => {
            // single pointed cusp
            let cusp = 0.35 * occlusal * occlusal * (1.0 - p.x * p.x);
            (a * p.x * (1.0 - 0.2 * occlusal), b * p.y, h * (p.z + cusp))
        }
        ToothKind::Premolar => {
            // buccal and lingual cusps
            let cusps = 0.18 * occlusal * (std::f64::consts::PI * p.y).cos().abs();
            (a * p.x, b * p.y, h * (p.z * 0.9 + cusps))
        }
        ToothKind::Molar => {
            // four cusps on a flattened occlusal table
            let tp = std::f64::consts::PI;
            let cusps = 0.15 * occlusal * ((tp * p.x).cos() * (tp * p.y).cos()).abs();
            let flat = 1.0 - 0.25 * occlusal * occlusal;
            (a * p.x, b * p.y, h * (p.z * flat + cusps))
        }
    };
    Vec3::new(x, y, z)
}
