//! Point-based per-tooth encoder, used when the mesh patch encoder is
//! switched off.

use crate::nn::{Activation, Builder, Linear, Mlp, NodeId, Tape};

use ndarray::Array2;

#[derive(Debug, Clone)]
pub struct PointLocalEncoder {
    pub dim: usize,
    mlp: Mlp,
    out: Linear,
}

impl PointLocalEncoder {
    pub fn new(b: &mut Builder, dim: usize) -> Self {
        b.scope("point_local", |b| PointLocalEncoder {
            dim,
            mlp: Mlp::with_activation(b, "mlp", (3, dim, dim), 1.0, Activation::Relu),
            out: Linear::new(b, "out", dim, dim, 1.0),
        })
    }

    /// `points`: per-tooth clouds stacked tooth by tooth, relative to each
    /// tooth's center. Returns `|K| × dim`.
    pub fn forward(&self, t: &mut Tape, points: &Array2<f64>, points_per_tooth: usize) -> NodeId {
        let x = t.input(points.clone());
        let h = self.mlp.forward(t, x);
        let h = t.relu(h);
        let pooled = t.segment_max(h, points_per_tooth);
        self.out.forward(t, pooled)
    }
}
