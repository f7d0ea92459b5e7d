use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::tape::{Grads, ParamSnapshot, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay, applied to weight matrices only (not to
    /// biases or layer-norm parameters).
    pub weight_decay: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub grad_clip: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01, grad_clip: 1.0 }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.grad_clip >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWState {
    pub step: u64,
    pub m: Vec<ParamSnapshot>,
    pub v: Vec<ParamSnapshot>,
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    decay: Vec<bool>,
}

fn decays(name: &str) -> bool {
    name.ends_with(".w") || name == "w"
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        let zeros = Grads::zeros_like(store).0;
        AdamW {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
            decay: store.ids().map(|id| decays(store.name(id))).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update; returns the gradient norm before clipping.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) -> f64 {
        let c = &self.config;
        let norm = grads.norm();
        let clip = if c.grad_clip > 0.0 && norm > c.grad_clip { c.grad_clip / norm } else { 1.0 };
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let decay = if self.decay[i] { c.lr * c.weight_decay } else { 0.0 };
            Zip::from(store.get_mut(id)).and(&mut self.m[i]).and(&mut self.v[i]).and(&grads.0[i]).for_each(
                |p, m, v, &g| {
                    let g = g * clip;
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= decay * *p + c.lr * mhat / (vhat.sqrt() + c.eps);
                },
            );
        }
        norm
    }

    pub fn state(&self, store: &ParamStore) -> AdamWState {
        let snap = |arrs: &[Array2<f64>]| {
            store
                .ids()
                .zip(arrs)
                .map(|(id, a)| ParamSnapshot {
                    name: store.name(id).to_string(),
                    shape: a.dim(),
                    data: a.iter().copied().collect(),
                })
                .collect()
        };
        AdamWState { step: self.step, m: snap(&self.m), v: snap(&self.v) }
    }

    pub fn load_state(&mut self, store: &ParamStore, state: &AdamWState) -> Result<()> {
        let restore = |snap: &[ParamSnapshot]| -> Result<Vec<Array2<f64>>> {
            let mut shadow = store.clone();
            shadow.restore(snap)?;
            Ok(shadow.ids().map(|id| shadow.get(id).clone()).collect())
        };
        self.m = restore(&state.m)?;
        self.v = restore(&state.v)?;
        self.step = state.step;
        Ok(())
    }
}
