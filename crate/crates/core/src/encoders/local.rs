//! Patch transformer over a tooth surface.

use ndarray::Array2;

use super::features::{FACE_FEATURES, POSITION_SCALE};
use crate::error::{Error, Result};
use crate::nn::{uniform_segments, AttentionMode, Builder, Linear, NodeId, ParamStore, Tape, Transformer};

/// Parameter-name prefix of the local encoder; pretrained weights are
/// transferred by this prefix.
pub const LOCAL_PREFIX: &str = "local.";

#[derive(Debug, Clone)]
pub struct LocalEncoder {
    pub dim: usize,
    pub patch_size: usize,
    embed: Linear,
    pos: Linear,
    transformer: Transformer,
}

impl LocalEncoder {
    pub fn new(b: &mut Builder, patch_size: usize, dim: usize, depth: usize, heads: usize) -> Self {
        b.scope("local", |b| LocalEncoder {
            dim,
            patch_size,
            embed: Linear::new(b, "embed", patch_size * FACE_FEATURES, dim, 1.0),
            pos: Linear::new(b, "pos", 3, dim, 1.0),
            transformer: Transformer::new(b, "enc", dim, depth, heads),
        })
    }

    /// Token embeddings after the final norm. `features` has one row per
    /// patch, `centers` the matching patch centers in mm; tokens attend only
    /// within their own segment.
    pub fn tokens(
        &self,
        t: &mut Tape,
        features: Array2<f64>,
        centers: &Array2<f64>,
        segments: &[(usize, usize)],
    ) -> NodeId {
        let x = t.input(features);
        let c = t.input(centers * POSITION_SCALE);
        let e = self.embed.forward(t, x);
        let p = self.pos.forward(t, c);
        let h = t.add(e, p);
        self.transformer.forward(t, h, segments, AttentionMode::Softmax)
    }

    /// Encodes `n_teeth` teeth whose patches are stacked tooth by tooth;
    /// returns `n_teeth × dim` mean-pooled tooth embeddings.
    pub fn forward(
        &self,
        t: &mut Tape,
        features: &Array2<f64>,
        centers: &Array2<f64>,
        patches_per_tooth: usize,
    ) -> Result<NodeId> {
        if patches_per_tooth == 0 {
            return Err(Error::Shape("tooth with zero patches".into()));
        }
        if features.nrows() != centers.nrows() || !features.nrows().is_multiple_of(patches_per_tooth) {
            return Err(Error::Shape(format!(
                "{} patch rows, {} center rows, {patches_per_tooth} patches per tooth",
                features.nrows(),
                centers.nrows()
            )));
        }
        let segments = uniform_segments(features.nrows(), patches_per_tooth);
        let tokens = self.tokens(t, features.clone(), centers, &segments);
        Ok(t.segment_mean(tokens, patches_per_tooth))
    }

    /// Evaluation-mode embedding of stacked teeth.
    pub fn encode(
        &self,
        store: &ParamStore,
        features: &Array2<f64>,
        centers: &Array2<f64>,
        patches_per_tooth: usize,
    ) -> Result<Array2<f64>> {
        let mut t = Tape::new(store);
        let out = self.forward(&mut t, features, centers, patches_per_tooth)?;
        Ok(t.value(out).clone())
    }
}
