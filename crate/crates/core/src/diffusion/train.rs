//! Joint training of the encoders and the predictor.
//!
//! Every random draw is keyed by `(seed, epoch, record)`, so results do not
//! depend on the thread count and a run resumed from a checkpoint continues
//! exactly as an uninterrupted one.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::loss::{LossComponents, LossGeometry, LossWeights};
use super::model::{Model, Predictor};
use super::schedule::forward_diffuse;
use crate::encoders::PreparedJaw;
use crate::error::{Error, Result};
use crate::exec;
use crate::nn::{AdamW, AdamWConfig, AdamWState, Grads, Tape};
use crate::seeds;
use crate::synth::DatasetRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub weights: LossWeights,
    /// Vertices per tooth used by the chamfer term (`0` uses all).
    pub loss_vertices: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 8,
            optimizer: AdamWConfig::default(),
            weights: LossWeights::default(),
            loss_vertices: 128,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Single-CPU schedule: 200 epochs, with the learning rate raised to
    /// 1e-3 so the narrow desk networks converge within them.
    pub fn desk() -> Self {
        let mut c = TrainConfig { epochs: 200, ..TrainConfig::default() };
        c.optimizer.lr = 1e-3;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.weights.validate()?;
        self.optimizer.validate()
    }
}

/// Mean loss components over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub cd: f64,
    pub diff: f64,
    pub pos: f64,
    pub total: f64,
}

impl EpochLoss {
    pub const HEADER: &'static str = "epoch\tL_CD\tL_diff\tL_pos\ttotal";

    pub fn row(&self) -> String {
        format!("{}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}", self.epoch, self.cd, self.diff, self.pos, self.total)
    }
}

/// Loss curve as a tab-separated table with a header line.
pub fn loss_table(curve: &[EpochLoss]) -> String {
    let mut s = String::from(EpochLoss::HEADER);
    s.push('\n');
    for e in curve {
        s.push_str(&e.row());
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epochs_done: usize,
    pub optimizer: AdamWState,
    pub curve: Vec<EpochLoss>,
}

/// Per-record inputs precomputed once before training.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub preps: Vec<PreparedJaw>,
    pub geometry: Vec<LossGeometry>,
}

impl TrainData {
    pub fn new(model: &Model, records: &[&DatasetRecord], loss_vertices: usize) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        let prepared = exec::map_indexed(records, |_, r| {
            Ok((model.prepare(&r.input)?, LossGeometry::from_record(r, loss_vertices)?))
        });
        let (preps, geometry) = prepared.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
        Ok(TrainData { preps, geometry })
    }

    pub fn len(&self) -> usize {
        self.preps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preps.is_empty()
    }
}

/// Loss and parameter gradient for one record. The diffusion timestep and
/// noise come from `rng_parts`.
pub fn record_loss_and_grad(
    model: &Model,
    prep: &PreparedJaw,
    geo: &LossGeometry,
    weights: &LossWeights,
    seed: u64,
    rng_parts: &[u64],
) -> Result<(LossComponents, Grads)> {
    let scaling = model.config.z_scaling;
    let (zt, timestep) = match model.predictor {
        Predictor::Diffusion(_) => {
            let mut rng = seeds::rng(seed, rng_parts);
            let t = rng.random_range(1..=model.schedule.t_max());
            let eps = Array2::from_shape_simple_fn(geo.z0().dim(), || StandardNormal.sample(&mut rng));
            (forward_diffuse(&scaling.apply(geo.z0()), t, &eps, &model.schedule)?, t)
        }
        Predictor::Regression(_) => (Array2::zeros(geo.z0().dim()), 0),
    };
    let mut tape = Tape::new(&model.store);
    let out = model.forward(&mut tape, prep, &zt, timestep)?;
    let z0_hat = scaling.invert(tape.value(out));
    let (loss, grad) = geo.evaluate(&z0_hat, weights)?;
    // d/d(scaled prediction) = gradient divided by the column scale
    let grads = tape.backward(out, scaling.invert(&grad));
    Ok((loss, grads))
}

/// Trains `model` in place. `on_epoch` runs after every epoch with the
/// updated state (for logging and checkpointing).
pub fn train(
    model: &mut Model,
    data: &TrainData,
    cfg: &TrainConfig,
    resume: Option<TrainState>,
    mut on_epoch: impl FnMut(&Model, &TrainState) -> Result<()>,
) -> Result<TrainState> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut opt = AdamW::new(cfg.optimizer.clone(), &model.store);
    let mut state = match resume {
        Some(s) => {
            opt.load_state(&model.store, &s.optimizer)?;
            s
        }
        None => TrainState { epochs_done: 0, optimizer: opt.state(&model.store), curve: Vec::new() },
    };
    let n = data.len();
    for epoch in state.epochs_done..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seeds::rng(cfg.seed, &[epoch as u64]));
        let mut sum = LossComponents::default();
        for batch in order.chunks(cfg.batch_size) {
            let m: &Model = model;
            let results = exec::map_indexed(batch, |_, &i| {
                record_loss_and_grad(
                    m,
                    &data.preps[i],
                    &data.geometry[i],
                    &cfg.weights,
                    cfg.seed,
                    &[epoch as u64, i as u64],
                )
            });
            let mut grads = Grads::zeros_like(&model.store);
            for r in results {
                let (loss, g) = r?;
                sum.add(&loss);
                grads.add_assign(&g);
            }
            grads.scale(1.0 / batch.len() as f64);
            if !grads.is_finite() {
                return Err(Error::Numerical(format!("non-finite gradient in epoch {epoch}")));
            }
            opt.step(&mut model.store, &grads);
        }
        sum.scale(1.0 / n as f64);
        state.curve.push(EpochLoss { epoch, cd: sum.cd, diff: sum.diff, pos: sum.pos, total: sum.total });
        state.epochs_done = epoch + 1;
        state.optimizer = opt.state(&model.store);
        on_epoch(model, &state)?;
    }
    Ok(state)
}
