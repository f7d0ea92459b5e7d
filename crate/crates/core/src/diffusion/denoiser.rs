//! Networks mapping the fused condition (and, for the diffusion model, the
//! noisy parameters and timestep) to per-tooth 6-DoF predictions.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::encoders::{FeatureBundle, POSITION_SCALE};
use crate::error::{Error, Result};
use crate::nn::{single_segment, AttentionMode, Builder, Linear, Mlp, NodeId, ParamStore, Tape, Transformer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub dim: usize,
    pub blocks: usize,
    pub heads: usize,
    /// Weight scale of the output head.
    pub head_gain: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig { dim: 32, blocks: 6, heads: 4, head_gain: 0.1 }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "denoiser dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if !self.dim.is_multiple_of(2) {
            return Err(Error::Config("denoiser dim must be even for the timestep embedding".into()));
        }
        Ok(())
    }
}

/// `[sin(t·f_0), …, sin(t·f_{h−1}), cos(t·f_0), …]` with
/// `f_i = 10000^(−i/h)` and `h = dim/2`.
pub fn timestep_embedding(t: usize, dim: usize) -> Array2<f64> {
    let half = dim / 2;
    let mut e = Array2::zeros((1, dim));
    for i in 0..half {
        let f = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let x = t as f64 * f;
        e[(0, i)] = x.sin();
        e[(0, half + i)] = x.cos();
    }
    e
}

/// Per-column multipliers that bring the raw center columns of the fused
/// condition onto the scale of the learned features.
fn condition_scale(k: usize, width: usize, center_col: usize) -> Array2<f64> {
    Array2::from_shape_fn(
        (k, width),
        |(_, j)| {
            if (center_col..center_col + 3).contains(&j) {
                POSITION_SCALE
            } else {
                1.0
            }
        },
    )
}

fn check_condition(cond: &Array2<f64>, width: usize) -> Result<()> {
    if cond.ncols() != width || cond.nrows() == 0 {
        return Err(Error::Shape(format!("condition {:?}, expected (|K|, {width})", cond.dim())));
    }
    Ok(())
}

/// Transformer over tooth tokens predicting `z̄_0` from `(z_t, t, e)`.
#[derive(Debug, Clone)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    cond_dim: usize,
    center_col: usize,
    input: Linear,
    time: Mlp,
    transformer: Transformer,
    head: Linear,
}

impl Denoiser {
    /// `center_col` is the first of the three center columns in the fused
    /// condition of width `cond_dim`.
    pub fn new(b: &mut Builder, cfg: &DenoiserConfig, cond_dim: usize, center_col: usize) -> Result<Self> {
        cfg.validate()?;
        if center_col + 3 > cond_dim {
            return Err(Error::Config(format!("center column {center_col} outside condition width {cond_dim}")));
        }
        let d = cfg.dim;
        Ok(b.scope("denoiser", |b| Denoiser {
            config: cfg.clone(),
            cond_dim,
            center_col,
            input: Linear::new(b, "input", 6 + cond_dim, d, 1.0),
            time: Mlp::new(b, "time", (d, d, d), 1.0),
            transformer: Transformer::new(b, "tr", d, cfg.blocks, cfg.heads),
            head: Linear::new(b, "head", d, 6, cfg.head_gain),
        }))
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    /// `zt` is `|K| × 6`, `cond` is `|K| × cond_dim`.
    pub fn forward(&self, t: &mut Tape, zt: NodeId, timestep: usize, cond: NodeId) -> Result<NodeId> {
        let (k, w) = t.value(cond).dim();
        if w != self.cond_dim || t.value(zt).dim() != (k, 6) {
            return Err(Error::Shape(format!(
                "z_t {:?} and condition {:?} do not match width {}",
                t.value(zt).dim(),
                (k, w),
                self.cond_dim
            )));
        }
        let scale = t.input(condition_scale(k, w, self.center_col));
        let cond = t.mul(cond, scale);
        let x = t.concat_cols(&[zt, cond]);
        let h = self.input.forward(t, x);
        let emb = t.input(timestep_embedding(timestep, self.config.dim));
        let emb = self.time.forward(t, emb);
        let emb = t.gather_rows(emb, &vec![0; k]);
        let h = t.add(h, emb);
        let h = self.transformer.forward(t, h, &single_segment(k), AttentionMode::Softmax);
        Ok(self.head.forward(t, h))
    }

    /// Evaluation-mode prediction of `z̄_0`.
    pub fn denoise(
        &self,
        store: &ParamStore,
        zt: &Array2<f64>,
        timestep: usize,
        e: &FeatureBundle,
    ) -> Result<Array2<f64>> {
        check_condition(&e.fused, self.cond_dim)?;
        let mut t = Tape::new(store);
        let z = t.input(zt.clone());
        let c = t.input(e.fused.clone());
        let out = self.forward(&mut t, z, timestep, c)?;
        Ok(t.value(out).clone())
    }
}

/// Direct per-tooth regression used when the diffusion model is disabled.
#[derive(Debug, Clone)]
pub struct RegressionHead {
    cond_dim: usize,
    center_col: usize,
    mlp: Mlp,
}

impl RegressionHead {
    pub fn new(b: &mut Builder, hidden: usize, cond_dim: usize, center_col: usize) -> Result<Self> {
        if hidden == 0 || center_col + 3 > cond_dim {
            return Err(Error::Config("invalid regression head dimensions".into()));
        }
        Ok(b.scope("regression", |b| RegressionHead {
            cond_dim,
            center_col,
            mlp: Mlp::new(b, "mlp", (cond_dim, hidden, 6), 0.1),
        }))
    }

    pub fn forward(&self, t: &mut Tape, cond: NodeId) -> Result<NodeId> {
        let (k, w) = t.value(cond).dim();
        if w != self.cond_dim {
            return Err(Error::Shape(format!("condition width {w}, expected {}", self.cond_dim)));
        }
        let scale = t.input(condition_scale(k, w, self.center_col));
        let cond = t.mul(cond, scale);
        Ok(self.mlp.forward(t, cond))
    }

    pub fn predict(&self, store: &ParamStore, e: &FeatureBundle) -> Result<Array2<f64>> {
        check_condition(&e.fused, self.cond_dim)?;
        let mut t = Tape::new(store);
        let c = t.input(e.fused.clone());
        let out = self.forward(&mut t, c)?;
        Ok(t.value(out).clone())
    }
}
