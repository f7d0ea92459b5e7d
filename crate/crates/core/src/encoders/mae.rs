//! Masked-autoencoder pretraining of the local encoder.
//!
//! A random subset of each tooth's patches is hidden. The encoder sees only
//! the visible patches; a shallow decoder gets the encoded tokens back in
//! their original slots, a shared mask token in the hidden slots, and a
//! positional term for every slot, and reconstructs the face features and
//! corner coordinates of the hidden patches.

use ndarray::{concatenate, Array2, Axis};
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::features::{patch_features, PatchFeatures, FACE_CORNERS, FACE_FEATURES, POSITION_SCALE};
use super::local::{LocalEncoder, LOCAL_PREFIX};
use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::ToothMesh;
use crate::nn::{
    single_segment, AdamW, AdamWConfig, AttentionMode, Builder, Grads, Linear, NodeId, ParamId, ParamSnapshot,
    ParamStore, Tape, Transformer,
};
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaeConfig {
    pub mask_ratio: f64,
    pub epochs: usize,
    /// Teeth per optimizer step.
    pub batch_size: usize,
    pub decoder_depth: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for MaeConfig {
    fn default() -> Self {
        MaeConfig {
            mask_ratio: 0.75,
            epochs: 50,
            batch_size: 16,
            decoder_depth: 1,
            optimizer: AdamWConfig { lr: 1e-3, ..AdamWConfig::default() },
            seed: 0,
        }
    }
}

impl MaeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::Config(format!("mask_ratio must lie in (0, 1), got {}", self.mask_ratio)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.optimizer.validate()
    }
}

/// `(masked, visible)` patch counts; at least one of each.
pub fn mask_counts(n_patches: usize, ratio: f64) -> Result<(usize, usize)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("mask_ratio must lie in (0, 1), got {ratio}")));
    }
    if n_patches < 2 {
        return Err(Error::Config(format!("masking needs at least 2 patches, got {n_patches}")));
    }
    let masked = ((n_patches as f64 * ratio).round() as usize).clamp(1, n_patches - 1);
    Ok((masked, n_patches - masked))
}

/// Draws a mask; both index lists are sorted.
pub fn random_mask(n_patches: usize, ratio: f64, rng: &mut impl rand::Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    let (n_mask, _) = mask_counts(n_patches, ratio)?;
    let mut masked = index::sample(rng, n_patches, n_mask).into_vec();
    masked.sort_unstable();
    let visible = (0..n_patches).filter(|i| masked.binary_search(i).is_err()).collect();
    Ok((masked, visible))
}

#[derive(Debug, Clone)]
pub struct Mae {
    pub encoder: LocalEncoder,
    mask_token: ParamId,
    dec_pos: Linear,
    decoder: Transformer,
    head: Linear,
}

impl Mae {
    pub fn new(b: &mut Builder, patch_size: usize, enc: &EncoderConfig, decoder_depth: usize) -> Self {
        let encoder = LocalEncoder::new(b, patch_size, enc.d_local, enc.local_depth, enc.heads);
        b.scope("mae", |b| Mae {
            encoder,
            mask_token: b.normal("mask_token", (1, enc.d_local), 0.02),
            dec_pos: Linear::new(b, "pos", 3, enc.d_local, 1.0),
            decoder: Transformer::new(b, "dec", enc.d_local, decoder_depth, enc.heads),
            head: Linear::new(b, "head", enc.d_local, patch_size * (FACE_FEATURES + FACE_CORNERS), 1.0),
        })
    }

    /// Encoder tokens of the visible patches only; masked rows of `pf` are
    /// never read.
    pub fn encode_visible(&self, t: &mut Tape, pf: &PatchFeatures, visible: &[usize]) -> NodeId {
        let feats = pf.features.select(Axis(0), visible);
        let centers = pf.centers.select(Axis(0), visible);
        self.encoder.tokens(t, feats, &centers, &single_segment(visible.len()))
    }

    fn predict(&self, t: &mut Tape, pf: &PatchFeatures, masked: &[usize], visible: &[usize]) -> NodeId {
        let n = pf.features.nrows();
        let tokens = self.encode_visible(t, pf, visible);
        let mask = t.param(self.mask_token);
        let mask = t.gather_rows(mask, &vec![0; masked.len()]);
        let stacked = t.concat_rows(&[tokens, mask]);
        // slot p reads row order[p] of [visible tokens; mask tokens]
        let mut order = vec![0; n];
        for (row, &p) in visible.iter().chain(masked).enumerate() {
            order[p] = row;
        }
        let slots = t.gather_rows(stacked, &order);
        let c = t.input(&pf.centers * POSITION_SCALE);
        let pos = self.dec_pos.forward(t, c);
        let h = t.add(slots, pos);
        let h = self.decoder.forward(t, h, &single_segment(n), AttentionMode::Softmax);
        let h = t.gather_rows(h, masked);
        self.head.forward(t, h)
    }

    fn target(pf: &PatchFeatures, masked: &[usize]) -> Array2<f64> {
        concatenate![Axis(1), pf.features.select(Axis(0), masked), pf.corners.select(Axis(0), masked)]
    }

    /// Mean squared reconstruction error over the masked patches.
    pub fn loss(&self, store: &ParamStore, pf: &PatchFeatures, masked: &[usize], visible: &[usize]) -> f64 {
        let mut t = Tape::new(store);
        let pred = self.predict(&mut t, pf, masked, visible);
        let diff = t.value(pred) - &Self::target(pf, masked);
        diff.mapv(|d| d * d).mean().unwrap_or(0.0)
    }

    pub fn loss_and_grad(
        &self,
        store: &ParamStore,
        pf: &PatchFeatures,
        masked: &[usize],
        visible: &[usize],
    ) -> (f64, Grads) {
        let mut t = Tape::new(store);
        let pred = self.predict(&mut t, pf, masked, visible);
        let diff = t.value(pred) - &Self::target(pf, masked);
        let n = diff.len() as f64;
        let loss = diff.mapv(|d| d * d).sum() / n;
        let grads = t.backward(pred, diff * (2.0 / n));
        (loss, grads)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeReport {
    /// Reconstruction loss on a fixed evaluation mask before training.
    pub initial_loss: f64,
    /// The same after training.
    pub final_loss: f64,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MaeOutcome {
    pub store: ParamStore,
    pub model: Mae,
    pub report: MaeReport,
}

impl MaeOutcome {
    /// The pretrained local-encoder weights.
    pub fn encoder_weights(&self) -> Vec<ParamSnapshot> {
        self.store.snapshot().into_iter().filter(|p| p.name.starts_with(LOCAL_PREFIX)).collect()
    }
}

fn eval_loss(model: &Mae, store: &ParamStore, feats: &[PatchFeatures], masks: &[(Vec<usize>, Vec<usize>)]) -> f64 {
    let losses = exec::map_indexed(feats, |i, pf| model.loss(store, pf, &masks[i].0, &masks[i].1));
    losses.iter().sum::<f64>() / losses.len() as f64
}

/// Pretrains a fresh local encoder on a corpus of teeth.
pub fn pretrain_mae(teeth: &[ToothMesh], enc: &EncoderConfig, cfg: &MaeConfig) -> Result<MaeOutcome> {
    cfg.validate()?;
    enc.validate()?;
    let first = teeth.first().ok_or_else(|| Error::Config("empty pretraining corpus".into()))?;
    let patch_size = first.patch_size();
    let n_patches = first.n_patches();
    if teeth.iter().any(|m| m.patch_size() != patch_size || m.n_patches() != n_patches) {
        return Err(Error::Shape("all pretraining teeth need the same patch layout".into()));
    }
    mask_counts(n_patches, cfg.mask_ratio)?;
    let feats = exec::map_indexed(teeth, |_, m| patch_features(m)).into_iter().collect::<Result<Vec<_>>>()?;

    let mut store = ParamStore::new();
    let mut init_rng = seeds::rng(cfg.seed, &[0x4d4145]);
    let model = Mae::new(&mut Builder::new(&mut store, &mut init_rng), patch_size, enc, cfg.decoder_depth);
    let mut opt = AdamW::new(cfg.optimizer.clone(), &store);

    let eval_masks = (0..teeth.len())
        .map(|i| random_mask(n_patches, cfg.mask_ratio, &mut seeds::rng(cfg.seed, &[u64::MAX, i as u64])))
        .collect::<Result<Vec<_>>>()?;
    let initial_loss = eval_loss(&model, &store, &feats, &eval_masks);

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..teeth.len()).collect();
        order.shuffle(&mut seeds::rng(cfg.seed, &[epoch as u64]));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results = exec::map_indexed(batch, |_, &i| {
                let mut rng = seeds::rng(cfg.seed, &[epoch as u64, i as u64]);
                let (masked, visible) = random_mask(n_patches, cfg.mask_ratio, &mut rng)?;
                Ok(model.loss_and_grad(&store, &feats[i], &masked, &visible))
            });
            let mut grads = Grads::zeros_like(&store);
            for r in results {
                let (loss, g) = r?;
                total += loss;
                grads.add_assign(&g);
            }
            grads.scale(1.0 / batch.len() as f64);
            if !grads.is_finite() {
                return Err(Error::Numerical(format!("non-finite gradient in pretraining epoch {epoch}")));
            }
            opt.step(&mut store, &grads);
        }
        epoch_losses.push(total / teeth.len() as f64);
    }
    let final_loss = eval_loss(&model, &store, &feats, &eval_masks);
    Ok(MaeOutcome { store, model, report: MaeReport { initial_loss, final_loss, epoch_losses } })
}
