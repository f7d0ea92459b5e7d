//! Feature embedding of a dentition: a local encoder per tooth (patch
//! transformer, optionally pretrained as a masked autoencoder), feature
//! propagation across teeth, a global point-set encoder, and the fusion of
//! the three into one condition row per tooth.

mod features;
mod global;
mod local;
mod mae;
mod point_local;
mod propagate;

pub use features::{patch_features, PatchFeatures, FACE_CORNERS, FACE_FEATURES, LOCAL_SCALE, POSITION_SCALE};
pub use global::{ball_group, farthest_point_sampling, plan_global, GlobalEncoder, GlobalPlan, SaConfig};
pub use local::{LocalEncoder, LOCAL_PREFIX};
pub use mae::{mask_counts, pretrain_mae, random_mask, Mae, MaeConfig, MaeOutcome, MaeReport};
pub use point_local::PointLocalEncoder;
pub use propagate::Propagation;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sample_jaw_points, JawModel, ToothLabel, Vec3};
use crate::nn::{AttentionMode, Builder, NodeId, ParamStore, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub d_local: usize,
    pub d_global: usize,
    /// Transformer blocks of the local patch encoder.
    pub local_depth: usize,
    /// Transformer blocks of the propagation network.
    pub prop_depth: usize,
    pub heads: usize,
    pub points_per_tooth: usize,
    /// Seed of the surface sampling feeding the point encoders.
    pub point_seed: u64,
    pub sa1: SaConfig,
    pub sa2: SaConfig,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_local: 32,
            d_global: 32,
            local_depth: 2,
            prop_depth: 1,
            heads: 4,
            points_per_tooth: 128,
            point_seed: 0,
            sa1: SaConfig { npoint: 256, radius: 4.0, k: 16 },
            sa2: SaConfig { npoint: 64, radius: 12.0, k: 16 },
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_local == 0 || self.d_global == 0 || self.heads == 0 {
            return bad("encoder dimensions and head count must be positive".into());
        }
        if !self.d_local.is_multiple_of(self.heads) {
            return bad(format!("d_local {} is not divisible by {} heads", self.d_local, self.heads));
        }
        if self.points_per_tooth == 0 {
            return bad("points_per_tooth must be positive".into());
        }
        for sa in [&self.sa1, &self.sa2] {
            if sa.npoint == 0 || sa.k == 0 || !(sa.radius > 0.0) {
                return bad(format!("invalid set-abstraction stage {sa:?}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LocalKind {
    /// Patch transformer over the tooth mesh.
    #[default]
    Mesh,
    /// Per-tooth point encoder.
    Points,
}

/// Which parts of the embedding module are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderFlags {
    pub local: LocalKind,
    pub global: bool,
    pub propagation: bool,
}

impl Default for EncoderFlags {
    fn default() -> Self {
        EncoderFlags { local: LocalKind::Mesh, global: true, propagation: true }
    }
}

/// Geometry of one input dentition, precomputed once per record.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedJaw {
    pub labels: Vec<ToothLabel>,
    /// `|K| × 3` tooth centers, mm.
    pub centers: Array2<f64>,
    pub patches_per_tooth: usize,
    /// Stacked patch features of all teeth.
    pub patch_features: Array2<f64>,
    pub patch_centers: Array2<f64>,
    pub points_per_tooth: usize,
    /// Stacked per-tooth clouds relative to the tooth center, scaled.
    pub tooth_points: Array2<f64>,
    pub global: Option<GlobalPlan>,
}

impl PreparedJaw {
    pub fn n_teeth(&self) -> usize {
        self.labels.len()
    }
}

pub fn prepare_jaw(model: &JawModel, cfg: &EncoderConfig, flags: &EncoderFlags) -> Result<PreparedJaw> {
    if model.is_empty() {
        return Err(Error::InvalidMesh("dentition without teeth".into()));
    }
    let labels = model.labels();
    let centers_v = model.centers()?;
    let mut centers = Array2::zeros((labels.len(), 3));
    for (k, c) in centers_v.iter().enumerate() {
        for a in 0..3 {
            centers[(k, a)] = c[a];
        }
    }
    let n = cfg.points_per_tooth;
    let clouds = sample_jaw_points(model, n, cfg.point_seed)?;
    let mut tooth_points = Array2::zeros((labels.len() * n, 3));
    for (k, pts) in clouds.values().enumerate() {
        for (i, p) in pts.iter().enumerate() {
            let d = (p - centers_v[k]) * LOCAL_SCALE;
            for a in 0..3 {
                tooth_points[(k * n + i, a)] = d[a];
            }
        }
    }
    let (patches_per_tooth, patch_features_m, patch_centers) = if flags.local == LocalKind::Mesh {
        let per: Vec<PatchFeatures> = model.teeth.values().map(patch_features).collect::<Result<_>>()?;
        let np = per[0].features.nrows();
        if per.iter().any(|p| p.features.nrows() != np || p.features.ncols() != per[0].features.ncols()) {
            return Err(Error::Shape("teeth have different patch layouts".into()));
        }
        let f: Vec<_> = per.iter().map(|p| p.features.view()).collect();
        let c: Vec<_> = per.iter().map(|p| p.centers.view()).collect();
        (np, concatenate(Axis(0), &f).expect("same width"), concatenate(Axis(0), &c).expect("3 columns"))
    } else {
        (0, Array2::zeros((0, 0)), Array2::zeros((0, 3)))
    };
    let global = if flags.global {
        let all: Vec<Vec3> = clouds.values().flatten().copied().collect();
        Some(plan_global(&all, &cfg.sa1, &cfg.sa2)?)
    } else {
        None
    };
    Ok(PreparedJaw {
        labels,
        centers,
        patches_per_tooth,
        patch_features: patch_features_m,
        patch_centers,
        points_per_tooth: n,
        tooth_points,
        global,
    })
}

/// The fused condition and its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub e_g: Array1<f64>,
    pub e_l: Array2<f64>,
    pub centers: Array2<f64>,
    /// Row `k` is `[e_g, c_k, e_l[k]]`.
    pub fused: Array2<f64>,
}

impl FeatureBundle {
    pub fn n_teeth(&self) -> usize {
        self.fused.nrows()
    }
}

pub fn fuse(e_g: &Array1<f64>, locals: &Array2<f64>, centers: &Array2<f64>) -> Result<FeatureBundle> {
    if locals.nrows() != centers.nrows() || centers.ncols() != 3 {
        return Err(Error::Shape(format!("{} local rows but centers {:?}", locals.nrows(), centers.dim())));
    }
    let k = locals.nrows();
    let dg = e_g.len();
    let mut fused = Array2::zeros((k, dg + 3 + locals.ncols()));
    for r in 0..k {
        fused.slice_mut(s![r, ..dg]).assign(e_g);
        fused.slice_mut(s![r, dg..dg + 3]).assign(&centers.row(r));
        fused.slice_mut(s![r, dg + 3..]).assign(&locals.row(r));
    }
    Ok(FeatureBundle { e_g: e_g.clone(), e_l: locals.clone(), centers: centers.clone(), fused })
}

#[derive(Debug, Clone)]
pub enum LocalModule {
    Mesh(LocalEncoder),
    Points(PointLocalEncoder),
}

/// Tape nodes of one encoder pass.
#[derive(Debug, Clone, Copy)]
pub struct EncodedNodes {
    pub e_g: NodeId,
    pub e_l: NodeId,
    pub fused: NodeId,
}

#[derive(Debug, Clone)]
pub struct Encoders {
    pub config: EncoderConfig,
    pub flags: EncoderFlags,
    pub local: LocalModule,
    pub propagation: Option<Propagation>,
    pub global: Option<GlobalEncoder>,
}

impl Encoders {
    pub fn new(b: &mut Builder, cfg: &EncoderConfig, flags: EncoderFlags, patch_size: usize) -> Result<Self> {
        cfg.validate()?;
        let local = match flags.local {
            LocalKind::Mesh => {
                LocalModule::Mesh(LocalEncoder::new(b, patch_size, cfg.d_local, cfg.local_depth, cfg.heads))
            }
            LocalKind::Points => LocalModule::Points(PointLocalEncoder::new(b, cfg.d_local)),
        };
        let propagation = flags.propagation.then(|| Propagation::new(b, cfg.d_local, cfg.prop_depth, cfg.heads));
        let global = flags.global.then(|| GlobalEncoder::new(b, cfg.d_global));
        Ok(Encoders { config: cfg.clone(), flags, local, propagation, global })
    }

    pub fn fused_dim(&self) -> usize {
        self.config.d_global + 3 + self.config.d_local
    }

    pub fn forward(&self, t: &mut Tape, prep: &PreparedJaw) -> Result<EncodedNodes> {
        let k = prep.n_teeth();
        let e_l0 = match &self.local {
            LocalModule::Mesh(enc) => {
                if prep.patches_per_tooth == 0 {
                    return Err(Error::Shape("record prepared without patch features".into()));
                }
                enc.forward(t, &prep.patch_features, &prep.patch_centers, prep.patches_per_tooth)?
            }
            LocalModule::Points(enc) => enc.forward(t, &prep.tooth_points, prep.points_per_tooth),
        };
        let e_l = match &self.propagation {
            Some(p) => p.forward(t, e_l0, &prep.centers, AttentionMode::Softmax)?,
            None => e_l0,
        };
        let e_g = match (&self.global, &prep.global) {
            (Some(g), Some(plan)) => g.forward(t, plan),
            (Some(_), None) => return Err(Error::Shape("record prepared without a global plan".into())),
            (None, _) => t.input(Array2::zeros((1, self.config.d_global))),
        };
        let g_rows = t.gather_rows(e_g, &vec![0; k]);
        let c = t.input(prep.centers.clone());
        let fused = t.concat_cols(&[g_rows, c, e_l]);
        Ok(EncodedNodes { e_g, e_l, fused })
    }

    /// Evaluation-mode feature bundle.
    pub fn bundle(&self, store: &ParamStore, prep: &PreparedJaw) -> Result<FeatureBundle> {
        let mut t = Tape::new(store);
        let nodes = self.forward(&mut t, prep)?;
        let e_g = t.value(nodes.e_g).row(0).to_owned();
        let out = FeatureBundle {
            e_g,
            e_l: t.value(nodes.e_l).clone(),
            centers: prep.centers.clone(),
            fused: t.value(nodes.fused).clone(),
        };
        Ok(out)
    }
}
