//! The full arrangement model: encoders plus a diffusion denoiser (or a
//! direct regression head), with checkpointing.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::denoiser::{Denoiser, DenoiserConfig, RegressionHead};
use super::sample::{sample_loop, to_params};
use super::schedule::{NoiseSchedule, COSINE_OFFSET, DEFAULT_T};
use super::train::{TrainConfig, TrainState};
use crate::encoders::{prepare_jaw, EncoderConfig, EncoderFlags, Encoders, FeatureBundle, PreparedJaw};
use crate::error::{Error, Result};
use crate::geometry::{JawModel, TransformParams};
use crate::nn::{Builder, NodeId, ParamSnapshot, ParamStore, Tape};
use crate::seeds;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Multipliers applied to the translation and rotation columns of `z`
/// before diffusion; predictions are divided by them again.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZScaling {
    pub translation: f64,
    pub rotation: f64,
}

impl Default for ZScaling {
    fn default() -> Self {
        ZScaling { translation: 1.0, rotation: 1.0 }
    }
}

impl ZScaling {
    fn factor(&self, col: usize) -> f64 {
        if col < 3 {
            self.translation
        } else {
            self.rotation
        }
    }

    pub fn apply(&self, z: &Array2<f64>) -> Array2<f64> {
        Array2::from_shape_fn(z.dim(), |(i, j)| z[(i, j)] * self.factor(j))
    }

    pub fn invert(&self, z: &Array2<f64>) -> Array2<f64> {
        Array2::from_shape_fn(z.dim(), |(i, j)| z[(i, j)] / self.factor(j))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub flags: EncoderFlags,
    pub denoiser: DenoiserConfig,
    /// Use the diffusion model; otherwise a direct regression head.
    pub dpm: bool,
    pub regression_hidden: usize,
    pub timesteps: usize,
    pub sample_steps: usize,
    pub z_scaling: ZScaling,
    /// Faces per patch of the input meshes.
    pub patch_size: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            flags: EncoderFlags::default(),
            denoiser: DenoiserConfig::default(),
            dpm: true,
            regression_hidden: 64,
            timesteps: DEFAULT_T,
            sample_steps: 50,
            z_scaling: ZScaling::default(),
            patch_size: crate::geometry::DEFAULT_PATCH_SIZE,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.denoiser.validate()?;
        if self.timesteps == 0 || self.sample_steps == 0 || !self.timesteps.is_multiple_of(self.sample_steps) {
            return Err(Error::Config(format!(
                "sample_steps {} must divide timesteps {}",
                self.sample_steps, self.timesteps
            )));
        }
        let s = self.z_scaling;
        if !(s.translation > 0.0 && s.rotation > 0.0) {
            return Err(Error::Config("z scaling factors must be positive".into()));
        }
        Ok(())
    }

    /// Short description of the active modules, stored in checkpoints.
    pub fn architecture_tag(&self) -> String {
        let mut parts = vec![if self.dpm { "diffusion" } else { "regression" }.to_string()];
        parts.push(format!("local={:?}", self.flags.local).to_lowercase());
        if !self.flags.global {
            parts.push("no-global".into());
        }
        if !self.flags.propagation {
            parts.push("no-fp".into());
        }
        parts.join("+")
    }
}

#[derive(Debug, Clone)]
pub enum Predictor {
    Diffusion(Denoiser),
    Regression(RegressionHead),
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoders: Encoders,
    pub predictor: Predictor,
    pub schedule: NoiseSchedule,
}

impl Model {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = seeds::rng(config.init_seed, &[0x4d4f44]);
        let mut b = Builder::new(&mut store, &mut rng);
        let encoders = Encoders::new(&mut b, &config.encoder, config.flags, config.patch_size)?;
        let width = encoders.fused_dim();
        let center_col = config.encoder.d_global;
        let predictor = if config.dpm {
            Predictor::Diffusion(Denoiser::new(&mut b, &config.denoiser, width, center_col)?)
        } else {
            Predictor::Regression(RegressionHead::new(&mut b, config.regression_hidden, width, center_col)?)
        };
        let schedule = NoiseSchedule::cosine(config.timesteps, COSINE_OFFSET)?;
        Ok(Model { config: config.clone(), store, encoders, predictor, schedule })
    }

    pub fn prepare(&self, input: &JawModel) -> Result<PreparedJaw> {
        prepare_jaw(input, &self.config.encoder, &self.config.flags)
    }

    pub fn bundle(&self, prep: &PreparedJaw) -> Result<FeatureBundle> {
        self.encoders.bundle(&self.store, prep)
    }

    /// Records the prediction graph on `t`. For the diffusion model `zt`
    /// and `timestep` are the scaled noisy parameters and the step; the
    /// regression head ignores them. Returns the node of the prediction in
    /// scaled units.
    pub fn forward(&self, t: &mut Tape, prep: &PreparedJaw, zt: &Array2<f64>, timestep: usize) -> Result<NodeId> {
        let nodes = self.encoders.forward(t, prep)?;
        match &self.predictor {
            Predictor::Diffusion(d) => {
                let z = t.input(zt.clone());
                d.forward(t, z, timestep, nodes.fused)
            }
            Predictor::Regression(h) => h.forward(t, nodes.fused),
        }
    }

    /// Predicted `z_0` (unscaled) for a prepared input.
    pub fn predict_stacked(&self, prep: &PreparedJaw, seed: u64) -> Result<Array2<f64>> {
        let e = self.bundle(prep)?;
        let scaling = self.config.z_scaling;
        let z = match &self.predictor {
            Predictor::Diffusion(d) => {
                sample_loop(prep.n_teeth(), &self.schedule, self.config.sample_steps, seed, |zt, t| {
                    d.denoise(&self.store, zt, t, &e)
                })?
            }
            Predictor::Regression(h) => h.predict(&self.store, &e)?,
        };
        Ok(scaling.invert(&z))
    }

    pub fn predict(&self, input: &JawModel, seed: u64) -> Result<TransformParams> {
        let prep = self.prepare(input)?;
        to_params(&prep.labels, &self.predict_stacked(&prep, seed)?)
    }

    /// Loads pretrained local-encoder weights; returns how many tensors
    /// were replaced.
    pub fn load_local_weights(&mut self, weights: &[ParamSnapshot]) -> Result<usize> {
        self.store.restore_prefix(weights, crate::encoders::LOCAL_PREFIX)
    }

    pub fn checkpoint(&self, train: Option<(&TrainConfig, &TrainState)>) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            architecture: self.config.architecture_tag(),
            config: self.config.clone(),
            params: self.store.snapshot(),
            train_config: train.map(|(c, _)| c.clone()),
            train_state: train.map(|(_, s)| s.clone()),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", ck.version)));
        }
        let mut model = Model::new(&ck.config)?;
        let tag = model.config.architecture_tag();
        if ck.architecture != tag && !ck.architecture.starts_with(&format!("{tag}+")) {
            return Err(Error::Config(format!(
                "checkpoint architecture {} does not match its config",
                ck.architecture
            )));
        }
        model.store.restore(&ck.params)?;
        Ok(model)
    }
}

/// Serialized model weights with the configuration that built them and,
/// for training checkpoints, the optimizer state needed to resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// [`ModelConfig::architecture_tag`], optionally followed by
    /// `+`-separated training tags such as `no-mae`.
    pub architecture: String,
    pub config: ModelConfig,
    pub params: Vec<ParamSnapshot>,
    pub train_config: Option<TrainConfig>,
    pub train_state: Option<TrainState>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::parse(path, e.to_string()))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }
}
