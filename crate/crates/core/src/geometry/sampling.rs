use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{JawModel, ToothLabel, ToothMesh, Vec3};
use crate::error::{Error, Result};

pub const DEFAULT_POINTS_PER_TOOTH: usize = 128;

/// Area-weighted uniform sampling of `n` points on the mesh surface.
pub fn sample_points(mesh: &ToothMesh, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    if n == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::DegenerateTooth { label: mesh.label, reason: "zero surface area".into() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            let target = rng.random::<f64>() * total;
            let face = cumulative.partition_point(|&c| c <= target).min(cumulative.len() - 1);
            let (u, v): (f64, f64) = (rng.random(), rng.random());
            let su = u.sqrt();
            let [a, b, c] = mesh.corners(face);
            a * (1.0 - su) + b * (su * (1.0 - v)) + c * (su * v)
        })
        .collect();
    Ok(points)
}

/// Samples `n` points from every tooth; tooth `k` in ascending label order
/// uses seed `seed + k`.
pub fn sample_jaw_points(model: &JawModel, n: usize, seed: u64) -> Result<BTreeMap<ToothLabel, Vec<Vec3>>> {
    model
        .teeth
        .iter()
        .enumerate()
        .map(|(k, (label, mesh))| Ok((*label, sample_points(mesh, n, seed.wrapping_add(k as u64))?)))
        .collect()
}
