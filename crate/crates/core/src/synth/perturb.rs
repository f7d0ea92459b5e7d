use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{apply_transform, geometric_center, se3_exp, JawModel, TransformParams, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbSpec {
    /// Per-axis standard deviation of the translation, mm.
    pub trans_sigma: f64,
    /// Per-axis clip of the translation, mm.
    pub trans_clip: f64,
    /// Largest rotation angle, degrees.
    pub rot_max: f64,
    pub pairs_per_model: usize,
    pub seed: u64,
}

impl Default for PerturbSpec {
    fn default() -> Self {
        PerturbSpec { trans_sigma: 1.0, trans_clip: 2.5, rot_max: 15.0, pairs_per_model: 10, seed: 0 }
    }
}

impl PerturbSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.trans_sigma >= 0.0 && self.trans_clip >= 0.0 && self.rot_max >= 0.0) {
            return Err(Error::Config("trans_sigma, trans_clip and rot_max must be non-negative".into()));
        }
        if self.pairs_per_model == 0 {
            return Err(Error::Config("pairs_per_model must be at least 1".into()));
        }
        Ok(())
    }
}

/// A training pair: aligned ground truth, perturbed input, and the
/// per-tooth transform that carries the input back onto the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub id: String,
    pub patient: usize,
    pub gt: JawModel,
    pub input: JawModel,
    pub z0: TransformParams,
}

/// Draws one random rigid displacement per tooth. Each tooth is rotated
/// about its own center, so `z0 = (−t, −r)` undoes it exactly.
pub fn perturb(gt: &JawModel, spec: &PerturbSpec, seed: u64) -> Result<DatasetRecord> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rot_max = spec.rot_max.to_radians();
    let mut teeth = BTreeMap::new();
    let mut z0 = BTreeMap::new();
    for (label, mesh) in &gt.teeth {
        let mut t = Vec3::zeros();
        for a in 0..3 {
            let n: f64 = StandardNormal.sample(&mut rng);
            t[a] = (n * spec.trans_sigma).clamp(-spec.trans_clip, spec.trans_clip);
        }
        let axis = loop {
            let v = Vec3::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            );
            let n = v.norm();
            if n > 1e-12 {
                break v / n;
            }
        };
        let angle = if rot_max > 0.0 { rng.random_range(0.0..=rot_max) } else { 0.0 };
        let r = axis * angle;
        let pivot = geometric_center(mesh)?;
        teeth.insert(*label, apply_transform(mesh, &se3_exp(&r, &t), &pivot));
        z0.insert(*label, [-t.x, -t.y, -t.z, -r.x, -r.y, -r.z]);
    }
    Ok(DatasetRecord {
        id: format!("{}_s{seed}", gt.sample_id),
        patient: 0,
        gt: gt.clone(),
        input: JawModel::from_map(gt.sample_id.clone(), teeth)?,
        z0: TransformParams { per_tooth: z0 },
    })
}
