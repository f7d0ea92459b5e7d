use std::collections::HashMap;

use ndarray::Array2;

use super::{JawModel, Vec3};
use crate::error::Result;

/// Target sets smaller than this are searched with a sorted sweep along x,
/// larger ones with a hash grid. Both searches are exact.
pub const BRUTE_FORCE_LIMIT: usize = 2000;

/// For every query point, the index of the closest target point and the
/// squared distance to it. Ties resolve to the lowest target index.
pub fn nearest_neighbors(query: &[Vec3], target: &[Vec3]) -> Vec<(usize, f64)> {
    if target.is_empty() {
        return vec![(usize::MAX, f64::INFINITY); query.len()];
    }
    if target.len() < BRUTE_FORCE_LIMIT {
        let sweep = Sweep::new(target);
        query.iter().map(|q| sweep.nearest(q, target)).collect()
    } else {
        let grid = Grid::new(target);
        query.iter().map(|q| grid.nearest(q, target)).collect()
    }
}

fn brute_nearest(q: &Vec3, target: &[Vec3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, p) in target.iter().enumerate() {
        let d = (p - q).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Target indices sorted by x; a query scans outward from its own x and
/// stops once the x gap alone exceeds the best distance.
struct Sweep {
    order: Vec<usize>,
    xs: Vec<f64>,
}

impl Sweep {
    fn new(points: &[Vec3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| points[a].x.total_cmp(&points[b].x).then(a.cmp(&b)));
        let xs = order.iter().map(|&i| points[i].x).collect();
        Sweep { order, xs }
    }

    fn nearest(&self, q: &Vec3, points: &[Vec3]) -> (usize, f64) {
        let start = self.xs.partition_point(|&x| x < q.x);
        let mut best = (usize::MAX, f64::INFINITY);
        let visit = |j: usize, best: &mut (usize, f64)| {
            let i = self.order[j];
            let d = (points[i] - q).norm_squared();
            if d < best.1 || (d == best.1 && i < best.0) {
                *best = (i, d);
            }
        };
        let (mut lo, mut hi) = (start, start);
        let (mut lo_open, mut hi_open) = (lo > 0, hi < self.xs.len());
        while lo_open || hi_open {
            if hi_open {
                let dx = self.xs[hi] - q.x;
                if dx * dx > best.1 {
                    hi_open = false;
                } else {
                    visit(hi, &mut best);
                    hi += 1;
                    hi_open = hi < self.xs.len();
                }
            }
            if lo_open {
                let dx = q.x - self.xs[lo - 1];
                if dx * dx > best.1 {
                    lo_open = false;
                } else {
                    visit(lo - 1, &mut best);
                    lo -= 1;
                    lo_open = lo > 0;
                }
            }
        }
        best
    }
}

/// Uniform hash grid over the target set.
struct Grid {
    origin: Vec3,
    cell: f64,
    extent: [i64; 3],
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl Grid {
    fn new(points: &[Vec3]) -> Self {
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let span = (hi - lo).max().max(1e-9);
        let cell = span / (points.len() as f64).cbrt().max(1.0);
        let extent = std::array::from_fn(|a| ((hi[a] - lo[a]) / cell).floor() as i64);
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            let key = std::array::from_fn(|a| ((p[a] - lo[a]) / cell).floor() as i64);
            cells.entry(key).or_default().push(i);
        }
        Grid { origin: lo, cell, extent, cells }
    }

    fn nearest(&self, q: &Vec3, points: &[Vec3]) -> (usize, f64) {
        let qc: [i64; 3] = std::array::from_fn(|a| ((q[a] - self.origin[a]) / self.cell).floor() as i64);
        // rings beyond this cover the whole grid
        let max_ring = (0..3).map(|a| qc[a].abs().max((qc[a] - self.extent[a]).abs())).max().unwrap_or(0) + 1;
        let mut best = (usize::MAX, f64::INFINITY);
        for ring in 0..=max_ring {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        let key = [qc[0] + dx, qc[1] + dy, qc[2] + dz];
                        if let Some(ids) = self.cells.get(&key) {
                            for &i in ids {
                                let d = (points[i] - q).norm_squared();
                                if d < best.1 || (d == best.1 && i < best.0) {
                                    best = (i, d);
                                }
                            }
                        }
                    }
                }
            }
            // anything in a further ring is at least `ring * cell` away
            let bound = ring as f64 * self.cell;
            if best.0 != usize::MAX && best.1 < bound * bound {
                break;
            }
        }
        best
    }
}

/// Symmetric mean squared nearest-neighbor distance between two point sets.
pub fn chamfer_points(a: &[Vec3], b: &[Vec3]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let ab: f64 = nearest_neighbors(a, b).iter().map(|(_, d)| d).sum();
    let ba: f64 = nearest_neighbors(b, a).iter().map(|(_, d)| d).sum();
    ab / a.len() as f64 + ba / b.len() as f64
}

/// Exhaustive variant of [`chamfer_points`].
pub fn chamfer_points_brute(a: &[Vec3], b: &[Vec3]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let ab: f64 = a.iter().map(|q| brute_nearest(q, b).1).sum();
    let ba: f64 = b.iter().map(|q| brute_nearest(q, a).1).sum();
    ab / a.len() as f64 + ba / b.len() as f64
}

/// Sum over teeth of the vertex chamfer distance between corresponding
/// teeth of `pred` and `gt`.
pub fn chamfer_per_tooth(pred: &JawModel, gt: &JawModel) -> Result<f64> {
    pred.check_same_labels(gt)?;
    Ok(pred.teeth.iter().map(|(label, p)| chamfer_points(&p.vertices, &gt.teeth[label].vertices)).sum())
}

/// `D[i][j] = ‖c_i − c_j‖₁` over tooth centers, rows in ascending label order.
pub fn distance_matrix(model: &JawModel) -> Result<Array2<f64>> {
    Ok(distance_matrix_from_centers(&model.centers()?))
}

pub(crate) fn distance_matrix_from_centers(centers: &[Vec3]) -> Array2<f64> {
    let n = centers.len();
    Array2::from_shape_fn((n, n), |(i, j)| (centers[i] - centers[j]).abs().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| Vec3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()) * 10.0).collect()
    }

    #[test]
    fn single_pair() {
        let a = [Vec3::zeros()];
        let b = [Vec3::new(1.0, 0.0, 0.0)];
        assert_eq!(chamfer_points(&a, &b), 2.0);
        assert_eq!(chamfer_points(&a, &a), 0.0);
    }

    #[test]
    fn grid_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let target = cloud(&mut rng, 3000);
        let mut query = cloud(&mut rng, 300);
        // a few queries well outside the bounding box
        query.push(Vec3::new(-50.0, 3.0, 4.0));
        query.push(Vec3::new(60.0, 70.0, -80.0));
        let fast = nearest_neighbors(&query, &target);
        for (q, (i, d)) in query.iter().zip(&fast) {
            let (bi, bd) = brute_nearest(q, &target);
            assert_eq!(*d, bd);
            assert_eq!(*i, bi);
        }
    }

    #[test]
    fn distance_matrix_hand_value() {
        let d = distance_matrix_from_centers(&[Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0)]);
        assert_eq!(d[(0, 1)], 6.0);
        assert_eq!(d[(1, 0)], 6.0);
        assert_eq!(d[(0, 0)], 0.0);
    }
}
