//! Deterministic few-step sampling.

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};

use super::schedule::{ddim_step, NoiseSchedule};
use crate::error::{Error, Result};
use crate::geometry::{canonicalize_axis_angle, ToothLabel, TransformParams, Vec3};
use crate::seeds;

/// Seeded `z_T ~ N(0, I)` of shape `k × 6`.
pub fn initial_noise(k: usize, seed: u64) -> Array2<f64> {
    let mut rng = seeds::rng(seed, &[0x5a_54]);
    Array2::from_shape_simple_fn((k, 6), || StandardNormal.sample(&mut rng))
}

/// Runs the sampler from seeded noise, calling `predict(z_t, t)` once per
/// step for the clean estimate.
pub fn sample_loop(
    k: usize,
    sched: &NoiseSchedule,
    n_steps: usize,
    seed: u64,
    mut predict: impl FnMut(&Array2<f64>, usize) -> Result<Array2<f64>>,
) -> Result<Array2<f64>> {
    let ts = sched.sampling_timesteps(n_steps)?;
    let mut z = initial_noise(k, seed);
    for (i, &t) in ts.iter().enumerate() {
        let z0_hat = predict(&z, t)?;
        if z0_hat.dim() != z.dim() {
            return Err(Error::Shape(format!("prediction {:?}, expected {:?}", z0_hat.dim(), z.dim())));
        }
        let t_prev = ts.get(i + 1).copied().unwrap_or(0);
        z = ddim_step(&z, &z0_hat, t, t_prev, sched)?;
    }
    Ok(z)
}

/// Stacked parameters to [`TransformParams`] with canonical rotation vectors.
pub fn to_params(labels: &[ToothLabel], z: &Array2<f64>) -> Result<TransformParams> {
    let mut z = z.clone();
    for mut row in z.rows_mut() {
        let r = canonicalize_axis_angle(&Vec3::new(row[3], row[4], row[5]));
        for a in 0..3 {
            row[3 + a] = r[a];
        }
    }
    TransformParams::from_stacked(labels, &z)
}
