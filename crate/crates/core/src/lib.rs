//! Diffusion-based automatic tooth arrangement.
//!
//! The crate is organized along the pipeline:
//!
//! * [`geometry`]: tooth meshes, SE(3) transforms, surface sampling, chamfer
//!   distance and center distance matrices.
//! * [`synth`]: procedural dental arches and perturbed training pairs.
//! * [`nn`]: a small reverse-mode autodiff tape with the layers the models need.
//! * [`encoders`]: patch-based local mesh encoder with masked pretraining,
//!   feature propagation across teeth, point-set global encoder and fusion.
//! * [`diffusion`]: noise schedule, denoiser, composite loss, training and
//!   deterministic DDIM sampling.
//! * [`metrics`]: ADD, PA-ADD, CSA, rotation error and arch-curve Fréchet
//!   distance.
//! * [`experiment`]: pretrain, fit, evaluate and iterate on whole corpora.

// `!(x > 0.0)` style guards are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod encoders;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod geometry;
pub mod metrics;
pub mod nn;
pub mod seeds;
pub mod synth;

pub use error::{Error, Result};
