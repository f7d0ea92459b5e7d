//! Composite training objective: per-tooth chamfer distance after
//! alignment, squared parameter error, and the center distance-matrix
//! discrepancy.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    align, chamfer_per_tooth, distance_matrix, nearest_neighbors, rotation_jacobians, JawModel, TransformParams, Vec3,
};
use crate::synth::DatasetRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub cd: f64,
    pub diff: f64,
    pub pos: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { cd: 0.05, diff: 0.5, pos: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.cd >= 0.0 && self.diff >= 0.0 && self.pos >= 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights must be non-negative, got {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub cd: f64,
    pub diff: f64,
    pub pos: f64,
    pub total: f64,
}

impl LossComponents {
    fn weighted(cd: f64, diff: f64, pos: f64, w: &LossWeights) -> Self {
        LossComponents { cd, diff, pos, total: w.cd * cd + w.diff * diff + w.pos * pos }
    }

    pub fn add(&mut self, o: &LossComponents) {
        self.cd += o.cd;
        self.diff += o.diff;
        self.pos += o.pos;
        self.total += o.total;
    }

    pub fn scale(&mut self, c: f64) {
        self.cd *= c;
        self.diff *= c;
        self.pos *= c;
        self.total *= c;
    }
}

fn sq_frobenius(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Reference evaluation on full meshes: aligns `record.input` with
/// `z0_hat` and compares with `record.gt`.
pub fn composite_loss(record: &DatasetRecord, z0_hat: &Array2<f64>, weights: &LossWeights) -> Result<LossComponents> {
    let labels = record.input.labels();
    let z0 = record.z0.stacked();
    if z0_hat.dim() != z0.dim() {
        return Err(Error::Shape(format!("z0_hat {:?}, expected {:?}", z0_hat.dim(), z0.dim())));
    }
    let pred = align(&record.input, &TransformParams::from_stacked(&labels, z0_hat)?)?;
    let cd = chamfer_per_tooth(&pred, &record.gt)?;
    let diff = sq_frobenius(z0_hat, &z0);
    let pos = sq_frobenius(&distance_matrix(&pred)?, &distance_matrix(&record.gt)?);
    Ok(LossComponents::weighted(cd, diff, pos, weights))
}

/// Per-record geometry for the fast loss with an analytic gradient.
///
/// The chamfer term may run on an evenly strided subset of each tooth's
/// vertices (`max_vertices`, `0` keeps all of them).
#[derive(Debug, Clone, PartialEq)]
pub struct LossGeometry {
    centers: Vec<Vec3>,
    rel: Vec<Vec<Vec3>>,
    gt: Vec<Vec<Vec3>>,
    gt_dist: Array2<f64>,
    z0: Array2<f64>,
}

fn strided(v: &[Vec3], max: usize) -> Vec<Vec3> {
    if max == 0 || v.len() <= max {
        return v.to_vec();
    }
    (0..max).map(|i| v[i * v.len() / max]).collect()
}

impl LossGeometry {
    pub fn new(input: &JawModel, gt: &JawModel, z0: &TransformParams, max_vertices: usize) -> Result<Self> {
        input.check_same_labels(gt)?;
        let centers = input.centers()?;
        let rel = input
            .teeth
            .values()
            .zip(&centers)
            .map(|(m, c)| strided(&m.vertices, max_vertices).iter().map(|v| v - c).collect())
            .collect();
        let gt_pts = gt.teeth.values().map(|m| strided(&m.vertices, max_vertices)).collect();
        Ok(LossGeometry { centers, rel, gt: gt_pts, gt_dist: distance_matrix(gt)?, z0: z0.stacked() })
    }

    pub fn from_record(record: &DatasetRecord, max_vertices: usize) -> Result<Self> {
        Self::new(&record.input, &record.gt, &record.z0, max_vertices)
    }

    pub fn z0(&self) -> &Array2<f64> {
        &self.z0
    }

    pub fn n_teeth(&self) -> usize {
        self.centers.len()
    }

    /// Loss components and the gradient of the weighted total with respect
    /// to `z0_hat`. Chamfer correspondences are held fixed.
    pub fn evaluate(&self, z0_hat: &Array2<f64>, w: &LossWeights) -> Result<(LossComponents, Array2<f64>)> {
        let k = self.n_teeth();
        if z0_hat.dim() != (k, 6) {
            return Err(Error::Shape(format!("z0_hat {:?}, expected ({k}, 6)", z0_hat.dim())));
        }
        let mut grad = Array2::zeros((k, 6));

        let mut diff = 0.0;
        for (g, (p, t)) in grad.iter_mut().zip(z0_hat.iter().zip(&self.z0)) {
            diff += (p - t) * (p - t);
            *g += w.diff * 2.0 * (p - t);
        }

        let mut cd = 0.0;
        for tooth in 0..k {
            let m = Vec3::new(z0_hat[(tooth, 0)], z0_hat[(tooth, 1)], z0_hat[(tooth, 2)]);
            let r = Vec3::new(z0_hat[(tooth, 3)], z0_hat[(tooth, 4)], z0_hat[(tooth, 5)]);
            let (rot, jac) = rotation_jacobians(&r);
            let shift = self.centers[tooth] + m;
            let pred: Vec<Vec3> = self.rel[tooth].iter().map(|v| rot * v + shift).collect();
            let gt = &self.gt[tooth];
            let (n, n_gt) = (pred.len() as f64, gt.len() as f64);
            let mut dp = vec![Vec3::zeros(); pred.len()];
            for (i, (j, d)) in nearest_neighbors(&pred, gt).into_iter().enumerate() {
                cd += d / n;
                dp[i] += (pred[i] - gt[j]) * (2.0 / n);
            }
            for (j, (i, d)) in nearest_neighbors(gt, &pred).into_iter().enumerate() {
                cd += d / n_gt;
                dp[i] += (pred[i] - gt[j]) * (2.0 / n_gt);
            }
            if w.cd > 0.0 {
                let dm: Vec3 = dp.iter().sum();
                for a in 0..3 {
                    grad[(tooth, a)] += w.cd * dm[a];
                    let dr: f64 = dp.iter().zip(&self.rel[tooth]).map(|(g, v)| g.dot(&(jac[a] * v))).sum();
                    grad[(tooth, 3 + a)] += w.cd * dr;
                }
            }
        }

        // aligned centers are c + m because each tooth rotates about its center
        let aligned: Vec<Vec3> =
            (0..k).map(|i| self.centers[i] + Vec3::new(z0_hat[(i, 0)], z0_hat[(i, 1)], z0_hat[(i, 2)])).collect();
        let mut pos = 0.0;
        for i in 0..k {
            for j in 0..k {
                let delta = aligned[i] - aligned[j];
                let e = delta.abs().sum() - self.gt_dist[(i, j)];
                pos += e * e;
                if i != j {
                    // the (i, j) and (j, i) entries contribute equally
                    for a in 0..3 {
                        if delta[a] != 0.0 {
                            grad[(i, a)] += w.pos * 4.0 * e * delta[a].signum();
                        }
                    }
                }
            }
        }
        Ok((LossComponents::weighted(cd, diff, pos, w), grad))
    }
}
