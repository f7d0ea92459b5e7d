//! Conditional diffusion over stacked per-tooth 6-DoF parameters.

mod denoiser;
mod loss;
mod model;
mod sample;
mod schedule;
mod train;

pub use denoiser::{timestep_embedding, Denoiser, DenoiserConfig, RegressionHead};
pub use loss::{composite_loss, LossComponents, LossGeometry, LossWeights};
pub use model::{Checkpoint, Model, ModelConfig, Predictor, ZScaling, CHECKPOINT_VERSION};
pub use sample::{initial_noise, sample_loop, to_params};
pub use schedule::{ddim_step, forward_diffuse, NoiseSchedule, COSINE_OFFSET, DEFAULT_T};
pub use train::{loss_table, record_loss_and_grad, train, EpochLoss, TrainConfig, TrainData, TrainState};
