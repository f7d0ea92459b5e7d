//! Two-stage set-abstraction encoder over the whole dentition point cloud.
//!
//! The sampling and grouping plan depends only on point positions: farthest
//! point sampling starts from the lexicographically smallest point and
//! breaks distance ties lexicographically, and each group holds the nearest
//! distinct positions inside the radius (padded with the nearest one). The
//! features are max-pooled, so the output is invariant to reordering the
//! input points and to duplicating them.

use std::cmp::Ordering;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::features::POSITION_SCALE;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::nn::{Activation, Builder, Mlp, NodeId, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaConfig {
    /// Centroids kept by farthest point sampling.
    pub npoint: usize,
    /// Grouping radius, mm.
    pub radius: f64,
    /// Neighbors per group.
    pub k: usize,
}

fn lex_cmp(a: &Vec3, b: &Vec3) -> Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z))
}

/// Farthest point sampling; returns indices into `points`.
pub fn farthest_point_sampling(points: &[Vec3], npoint: usize) -> Vec<usize> {
    if points.is_empty() || npoint == 0 {
        return Vec::new();
    }
    let start = (0..points.len()).min_by(|&a, &b| lex_cmp(&points[a], &points[b])).expect("non-empty");
    let mut chosen = vec![start];
    let mut dist: Vec<f64> = points.iter().map(|p| (p - points[start]).norm_squared()).collect();
    while chosen.len() < npoint.min(points.len()) {
        let mut best = 0;
        for i in 1..points.len() {
            let better = match dist[i].total_cmp(&dist[best]) {
                Ordering::Greater => true,
                Ordering::Equal => lex_cmp(&points[i], &points[best]) == Ordering::Less,
                Ordering::Less => false,
            };
            if better {
                best = i;
            }
        }
        chosen.push(best);
        let c = points[best];
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min((p - c).norm_squared());
        }
    }
    chosen
}

/// For each centroid, the `k` nearest distinct positions within `radius`
/// (ties broken lexicographically), padded by repeating the nearest.
pub fn ball_group(points: &[Vec3], centroids: &[Vec3], radius: f64, k: usize) -> Vec<usize> {
    let r2 = radius * radius;
    let mut out = Vec::with_capacity(centroids.len() * k);
    let mut cand: Vec<(f64, usize)> = Vec::new();
    for c in centroids {
        cand.clear();
        cand.extend(points.iter().enumerate().map(|(i, p)| ((p - c).norm_squared(), i)).filter(|&(d, _)| d <= r2));
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(lex_cmp(&points[a.1], &points[b.1])));
        cand.dedup_by(|a, b| points[a.1] == points[b.1]);
        if cand.is_empty() {
            // the centroid is one of the points, so this only happens for
            // external centroids; fall back to the single nearest point
            let nearest = (0..points.len())
                .min_by(|&a, &b| (points[a] - c).norm_squared().total_cmp(&(points[b] - c).norm_squared()))
                .expect("non-empty points");
            cand.push((0.0, nearest));
        }
        for j in 0..k {
            out.push(cand.get(j).unwrap_or(&cand[0]).1);
        }
    }
    out
}

/// Precomputed sampling and grouping for one point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalPlan {
    /// Stage-1 grouped offsets, `(n1·k1) × 3`, divided by the radius.
    pub rel1: Array2<f64>,
    pub k1: usize,
    /// Stage-2 grouped offsets between stage-1 centroids, `(n2·k2) × 3`.
    pub rel2: Array2<f64>,
    /// Stage-1 centroid row feeding each stage-2 group slot.
    pub groups2: Vec<usize>,
    pub k2: usize,
    /// Stage-2 centroid positions, `n2 × 3`, scaled for embedding.
    pub centroids2: Array2<f64>,
}

fn offsets(points: &[Vec3], centroids: &[Vec3], groups: &[usize], k: usize, radius: f64) -> Array2<f64> {
    let mut rel = Array2::zeros((groups.len(), 3));
    for (row, &g) in groups.iter().enumerate() {
        let d = (points[g] - centroids[row / k]) / radius;
        for a in 0..3 {
            rel[(row, a)] = d[a];
        }
    }
    rel
}

pub fn plan_global(points: &[Vec3], sa1: &SaConfig, sa2: &SaConfig) -> Result<GlobalPlan> {
    if points.len() < sa1.npoint {
        return Err(Error::Shape(format!(
            "point cloud has {} points, first stage samples {}",
            points.len(),
            sa1.npoint
        )));
    }
    let idx1 = farthest_point_sampling(points, sa1.npoint);
    let c1: Vec<Vec3> = idx1.iter().map(|&i| points[i]).collect();
    let groups1 = ball_group(points, &c1, sa1.radius, sa1.k);
    let idx2 = farthest_point_sampling(&c1, sa2.npoint);
    let c2: Vec<Vec3> = idx2.iter().map(|&i| c1[i]).collect();
    let groups2 = ball_group(&c1, &c2, sa2.radius, sa2.k);
    let mut centroids2 = Array2::zeros((c2.len(), 3));
    for (r, c) in c2.iter().enumerate() {
        for a in 0..3 {
            centroids2[(r, a)] = c[a] * POSITION_SCALE;
        }
    }
    Ok(GlobalPlan {
        rel1: offsets(points, &c1, &groups1, sa1.k, sa1.radius),
        k1: sa1.k,
        rel2: offsets(&c1, &c2, &groups2, sa2.k, sa2.radius),
        groups2,
        k2: sa2.k,
        centroids2,
    })
}

#[derive(Debug, Clone)]
pub struct GlobalEncoder {
    pub dim: usize,
    sa1: Mlp,
    sa2: Mlp,
    head: Mlp,
}

impl GlobalEncoder {
    pub fn new(b: &mut Builder, dim: usize) -> Self {
        let h = (dim / 2).max(1);
        b.scope("global", |b| GlobalEncoder {
            dim,
            sa1: Mlp::with_activation(b, "sa1", (3, h, h), 1.0, Activation::Relu),
            sa2: Mlp::with_activation(b, "sa2", (3 + h, dim, dim), 1.0, Activation::Relu),
            head: Mlp::with_activation(b, "head", (3 + dim, dim, dim), 1.0, Activation::Relu),
        })
    }

    /// Returns the `1 × dim` global feature.
    pub fn forward(&self, t: &mut Tape, plan: &GlobalPlan) -> NodeId {
        let x = t.input(plan.rel1.clone());
        let h = self.sa1.forward(t, x);
        let h = t.relu(h);
        let f1 = t.segment_max(h, plan.k1);
        let rel = t.input(plan.rel2.clone());
        let f1g = t.gather_rows(f1, &plan.groups2);
        let x = t.concat_cols(&[rel, f1g]);
        let h = self.sa2.forward(t, x);
        let h = t.relu(h);
        let f2 = t.segment_max(h, plan.k2);
        let c = t.input(plan.centroids2.clone());
        let x = t.concat_cols(&[c, f2]);
        let h = self.head.forward(t, x);
        let n2 = plan.centroids2.nrows();
        t.segment_max(h, n2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fps_spreads_points() {
        let pts: Vec<Vec3> = (0..11).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let idx = farthest_point_sampling(&pts, 3);
        assert_eq!(idx, vec![0, 10, 5]);
    }

    #[test]
    fn grouping_pads_and_dedups() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(5.0, 0.0, 0.0),
        ];
        let g = ball_group(&pts, &[pts[0]], 2.0, 4);
        assert_eq!(g, vec![0, 1, 0, 0]);
    }

    #[test]
    fn too_few_points_is_an_error() {
        let pts = vec![Vec3::zeros(); 3];
        let sa = SaConfig { npoint: 4, radius: 1.0, k: 2 };
        assert!(matches!(plan_global(&pts, &sa, &sa), Err(Error::Shape(_))));
    }
}
