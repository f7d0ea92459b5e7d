//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use archdiff::geometry::{JawModel, Mat3, ToothLabel, ToothMesh, Vec3};
use archdiff::nn::{check_gradients, NodeId, ParamStore, Tape};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut impl Rng, scale: f64) -> Vec3 {
    Vec3::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-scale..scale))
}

pub fn random_cloud(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<Vec3> {
    (0..n).map(|_| random_vec(rng, scale)).collect()
}

/// Rotation matrix of the unit quaternion `(cos θ/2, sin θ/2 · axis)`.
pub fn quaternion_rotation(r: &Vec3) -> Mat3 {
    let theta = r.norm();
    let (w, x, y, z) = if theta == 0.0 {
        (1.0, 0.0, 0.0, 0.0)
    } else {
        let s = (theta / 2.0).sin() / theta;
        ((theta / 2.0).cos(), r.x * s, r.y * s, r.z * s)
    };
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Mean over `a` of the squared distance to the closest point of `b`,
/// by exhaustive search.
fn one_sided(a: &[Vec3], b: &[Vec3]) -> f64 {
    let mut total = 0.0;
    for p in a {
        let mut best = f64::INFINITY;
        for q in b {
            let d = (p.x - q.x).powi(2) + (p.y - q.y).powi(2) + (p.z - q.z).powi(2);
            if d < best {
                best = d;
            }
        }
        total += best;
    }
    total / a.len() as f64
}

pub fn chamfer_oracle(a: &[Vec3], b: &[Vec3]) -> f64 {
    one_sided(a, b) + one_sided(b, a)
}

/// Discrete Fréchet distance by the memoized recursive definition.
pub fn frechet_oracle(a: &[Vec3], b: &[Vec3]) -> f64 {
    fn go(i: usize, j: usize, a: &[Vec3], b: &[Vec3], memo: &mut Vec<Vec<f64>>) -> f64 {
        if memo[i][j] >= 0.0 {
            return memo[i][j];
        }
        let d = (a[i] - b[j]).norm();
        let v = match (i, j) {
            (0, 0) => d,
            (0, _) => go(0, j - 1, a, b, memo).max(d),
            (_, 0) => go(i - 1, 0, a, b, memo).max(d),
            _ => go(i - 1, j, a, b, memo).min(go(i - 1, j - 1, a, b, memo)).min(go(i, j - 1, a, b, memo)).max(d),
        };
        memo[i][j] = v;
        v
    }
    let mut memo = vec![vec![-1.0; b.len()]; a.len()];
    go(a.len() - 1, b.len() - 1, a, b, &mut memo)
}

/// ADD by explicit summation over a flat list of vertex pairs.
pub fn add_oracle(pred: &JawModel, gt: &JawModel) -> f64 {
    let mut pairs: Vec<(Vec3, Vec3)> = Vec::new();
    for (label, t) in &pred.teeth {
        for (i, v) in t.vertices.iter().enumerate() {
            pairs.push((*v, gt.teeth[label].vertices[i]));
        }
    }
    let sum: f64 =
        pairs.iter().map(|(a, b)| ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt()).sum();
    sum / pairs.len() as f64
}

pub fn label(code: u32) -> ToothLabel {
    ToothLabel::new(code).unwrap()
}

/// Point-only teeth (no faces) with the given labels.
pub fn cloud_jaw(id: &str, teeth: &[(u32, Vec<Vec3>)]) -> JawModel {
    let map: BTreeMap<_, _> =
        teeth.iter().map(|(c, v)| (label(*c), ToothMesh::new(label(*c), v.clone(), Vec::new(), 1).unwrap())).collect();
    JawModel::from_map(id, map).unwrap()
}

/// A random jaw of `n_teeth` teeth with `n_vertices` each, spread along x.
pub fn random_jaw(rng: &mut impl Rng, n_teeth: usize, n_vertices: usize) -> JawModel {
    const CODES: [u32; 8] = [11, 12, 13, 14, 21, 22, 23, 24];
    let teeth: Vec<(u32, Vec<Vec3>)> = (0..n_teeth)
        .map(|i| {
            let offset = Vec3::new(8.0 * i as f64, 0.0, 0.0);
            (CODES[i], random_cloud(rng, n_vertices, 3.0).into_iter().map(|v| v + offset).collect())
        })
        .collect();
    cloud_jaw("random", &teeth)
}

/// Same jaw with every vertex moved by `f`.
pub fn map_vertices(model: &JawModel, mut f: impl FnMut(&Vec3) -> Vec3) -> JawModel {
    let mut out = model.clone();
    for t in out.teeth.values_mut() {
        for v in &mut t.vertices {
            *v = f(v);
        }
    }
    out
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Moves every parameter off its initial value. Zero biases put the rows
/// with zero offset exactly on a ReLU kink, where the loss has no gradient.
pub fn jitter(store: &mut ParamStore) {
    let mut rng = rng(99);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        store.get_mut(id).mapv_inplace(|v| v + rng.random_range(-0.05..0.05));
    }
}

/// Relative errors of the analytic gradient of `sum(out ⊙ W)`, for a
/// random `W`, on 10 random parameter coordinates after [`jitter`].
pub fn grad_errors(store: &mut ParamStore, forward: impl Fn(&mut Tape) -> NodeId) -> Vec<f64> {
    jitter(store);
    let (shape, grads) = {
        let mut t = Tape::new(store);
        let out = forward(&mut t);
        let shape = t.value(out).dim();
        let w = random_matrix(shape.0, shape.1, 42);
        (shape, t.backward(out, w))
    };
    let w = random_matrix(shape.0, shape.1, 42);
    let checks = check_gradients(store, &grads, 10, 7, |s| {
        let mut t = Tape::new(s);
        let out = forward(&mut t);
        (t.value(out) * &w).sum()
    });
    assert_eq!(checks.len(), 10);
    checks.into_iter().map(|c| c.rel_err).collect()
}

pub fn grad_check(store: &mut ParamStore, forward: impl Fn(&mut Tape) -> NodeId) {
    let errs = grad_errors(store, forward);
    assert!(errs.iter().all(|&e| e < 1e-4), "relative errors {errs:?}");
}
