//! Self-attention across the tooth tokens of one dentition.

use ndarray::Array2;

use super::features::POSITION_SCALE;
use crate::error::{Error, Result};
use crate::nn::{single_segment, AttentionMode, Builder, Linear, NodeId, ParamStore, Tape, Transformer};

#[derive(Debug, Clone)]
pub struct Propagation {
    pub dim: usize,
    pos: Linear,
    transformer: Transformer,
}

impl Propagation {
    pub fn new(b: &mut Builder, dim: usize, depth: usize, heads: usize) -> Self {
        b.scope("prop", |b| Propagation {
            dim,
            pos: Linear::new(b, "pos", 3, dim, 1.0),
            transformer: Transformer::new(b, "enc", dim, depth, heads),
        })
    }

    /// `features`: `|K| × dim` node; `centers`: tooth centers in mm.
    pub fn forward(
        &self,
        t: &mut Tape,
        features: NodeId,
        centers: &Array2<f64>,
        mode: AttentionMode,
    ) -> Result<NodeId> {
        let (rows, cols) = t.value(features).dim();
        if rows != centers.nrows() || cols != self.dim || centers.ncols() != 3 {
            return Err(Error::Shape(format!(
                "propagation got {rows}×{cols} features and {:?} centers, expected |K|×{} and |K|×3",
                centers.dim(),
                self.dim
            )));
        }
        let c = t.input(centers * POSITION_SCALE);
        let p = self.pos.forward(t, c);
        let h = t.add(features, p);
        Ok(self.transformer.forward(t, h, &single_segment(rows), mode))
    }

    pub fn propagate(
        &self,
        store: &ParamStore,
        features: &Array2<f64>,
        centers: &Array2<f64>,
        mode: AttentionMode,
    ) -> Result<Array2<f64>> {
        let mut t = Tape::new(store);
        let x = t.input(features.clone());
        let out = self.forward(&mut t, x, centers, mode)?;
        Ok(t.value(out).clone())
    }
}
