//! Variance-preserving noise schedule and the deterministic DDIM update.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_T: usize = 1000;
pub const COSINE_OFFSET: f64 = 0.008;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    /// `alpha_bar[t]` for `t = 0..=T`.
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Cosine schedule `ᾱ_t = f(t)/f(0)`, `f(t) = cos²((t/T + s)/(1 + s) · π/2)`.
    /// The last value is clamped away from zero so `ᾱ_T > 0`.
    pub fn cosine(t_max: usize, s: f64) -> Result<Self> {
        if t_max == 0 {
            return Err(Error::Config("schedule needs at least one timestep".into()));
        }
        let f = |t: usize| {
            let x = (t as f64 / t_max as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2;
            x.cos().powi(2)
        };
        let f0 = f(0);
        let mut alpha_bar: Vec<f64> = (0..=t_max).map(|t| f(t) / f0).collect();
        alpha_bar[0] = 1.0;
        let last = alpha_bar[t_max].max(1e-12);
        alpha_bar[t_max] = last.min(alpha_bar[t_max - 1] * 0.5);
        Ok(NoiseSchedule { alpha_bar })
    }

    pub fn t_max(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    fn check(&self, t: usize) -> Result<()> {
        if t > self.t_max() {
            return Err(Error::Timestep { t, max: self.t_max() });
        }
        Ok(())
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.alpha_bar[t])
    }

    /// `α_t = √ᾱ_t`.
    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar(t)?.sqrt())
    }

    /// `σ_t = √(1 − ᾱ_t)`.
    pub fn sigma(&self, t: usize) -> Result<f64> {
        Ok((1.0 - self.alpha_bar(t)?).sqrt())
    }

    /// Descending timesteps `T, T − Δ, …, Δ` of an `n_steps` sampler.
    pub fn sampling_timesteps(&self, n_steps: usize) -> Result<Vec<usize>> {
        let t_max = self.t_max();
        if n_steps == 0 || n_steps > t_max {
            return Err(Error::Config(format!("n_steps must lie in 1..={t_max}, got {n_steps}")));
        }
        if !t_max.is_multiple_of(n_steps) {
            return Err(Error::Config(format!("n_steps {n_steps} does not divide T = {t_max}")));
        }
        let stride = t_max / n_steps;
        Ok((1..=n_steps).rev().map(|i| i * stride).collect())
    }
}

/// `z_t = α_t z_0 + σ_t ε`.
pub fn forward_diffuse(z0: &Array2<f64>, t: usize, eps: &Array2<f64>, sched: &NoiseSchedule) -> Result<Array2<f64>> {
    if z0.dim() != eps.dim() {
        return Err(Error::Shape(format!("z0 {:?} vs eps {:?}", z0.dim(), eps.dim())));
    }
    let (a, s) = (sched.alpha(t)?, sched.sigma(t)?);
    Ok(z0 * a + eps * s)
}

/// Deterministic update from `t` to `t_prev` given the clean estimate:
/// `√ᾱ_prev ẑ_0 + √(1 − ᾱ_prev) · (z_t − √ᾱ_t ẑ_0)/√(1 − ᾱ_t)`.
pub fn ddim_step(
    zt: &Array2<f64>,
    z0_hat: &Array2<f64>,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
) -> Result<Array2<f64>> {
    if t_prev >= t {
        return Err(Error::Config(format!("DDIM step needs t_prev < t, got {t_prev} >= {t}")));
    }
    if zt.dim() != z0_hat.dim() {
        return Err(Error::Shape(format!("z_t {:?} vs z0_hat {:?}", zt.dim(), z0_hat.dim())));
    }
    let (a_t, s_t) = (sched.alpha(t)?, sched.sigma(t)?);
    let (a_p, s_p) = (sched.alpha(t_prev)?, sched.sigma(t_prev)?);
    if s_p == 0.0 {
        return Ok(z0_hat.clone());
    }
    let eps_hat = (zt - &(z0_hat * a_t)) / s_t;
    Ok(z0_hat * a_p + eps_hat * s_p)
}
