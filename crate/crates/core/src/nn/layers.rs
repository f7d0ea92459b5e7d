//! Parameterized building blocks on top of [`Tape`].

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tape::{AttentionMode, NodeId, ParamId, ParamStore, Tape};

/// Registers parameters under a dotted name prefix.
pub struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Builder { store, rng, prefix: String::new() }
    }

    pub fn scope<R>(&mut self, name: &str, f: impl FnOnce(&mut Builder) -> R) -> R {
        let prefix = format!("{}{name}.", self.prefix);
        let mut inner = Builder { store: self.store, rng: self.rng, prefix };
        f(&mut inner)
    }

    pub fn param(&mut self, name: &str, value: Array2<f64>) -> ParamId {
        self.store.add(format!("{}{name}", self.prefix), value)
    }

    pub fn normal(&mut self, name: &str, shape: (usize, usize), std: f64) -> ParamId {
        let dist = Normal::new(0.0, std).expect("finite std");
        let v = Array2::from_shape_simple_fn(shape, || dist.sample(self.rng));
        self.param(name, v)
    }

    pub fn uniform(&mut self, name: &str, shape: (usize, usize), bound: f64) -> ParamId {
        let v = Array2::from_shape_simple_fn(shape, || self.rng.random_range(-bound..bound));
        self.param(name, v)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    /// `gain` scales the default `1/sqrt(fan_in)` weight standard deviation.
    pub fn new(b: &mut Builder, name: &str, fan_in: usize, fan_out: usize, gain: f64) -> Self {
        b.scope(name, |b| Linear {
            w: b.normal("w", (fan_in, fan_out), gain / (fan_in as f64).sqrt()),
            b: b.param("b", Array2::zeros((1, fan_out))),
        })
    }

    pub fn forward(&self, t: &mut Tape, x: NodeId) -> NodeId {
        let w = t.param(self.w);
        let b = t.param(self.b);
        let y = t.matmul(x, w);
        t.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(b: &mut Builder, name: &str, dim: usize) -> Self {
        b.scope(name, |b| LayerNorm {
            gamma: b.param("g", Array2::ones((1, dim))),
            beta: b.param("b", Array2::zeros((1, dim))),
        })
    }

    pub fn forward(&self, t: &mut Tape, x: NodeId) -> NodeId {
        let g = t.param(self.gamma);
        let b = t.param(self.beta);
        t.layer_norm(x, g, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Relu,
}

impl Activation {
    pub fn apply(self, t: &mut Tape, x: NodeId) -> NodeId {
        match self {
            Activation::Gelu => t.gelu(x),
            Activation::Relu => t.relu(x),
        }
    }
}

/// `Linear → activation → Linear`.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
    pub act: Activation,
}

impl Mlp {
    pub fn new(b: &mut Builder, name: &str, dims: (usize, usize, usize), out_gain: f64) -> Self {
        Self::with_activation(b, name, dims, out_gain, Activation::Gelu)
    }

    pub fn with_activation(
        b: &mut Builder,
        name: &str,
        dims: (usize, usize, usize),
        out_gain: f64,
        act: Activation,
    ) -> Self {
        b.scope(name, |b| Mlp {
            fc1: Linear::new(b, "fc1", dims.0, dims.1, 1.0),
            fc2: Linear::new(b, "fc2", dims.1, dims.2, out_gain),
            act,
        })
    }

    pub fn forward(&self, t: &mut Tape, x: NodeId) -> NodeId {
        let h = self.fc1.forward(t, x);
        let h = self.act.apply(t, h);
        self.fc2.forward(t, h)
    }
}

/// Pre-norm transformer block with segment-restricted self-attention.
#[derive(Debug, Clone)]
pub struct Block {
    pub dim: usize,
    pub heads: usize,
    ln1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    ln2: LayerNorm,
    mlp: Mlp,
}

pub const MLP_RATIO: usize = 2;

impl Block {
    pub fn new(b: &mut Builder, name: &str, dim: usize, heads: usize) -> Self {
        assert!(heads > 0 && dim.is_multiple_of(heads), "dim {dim} not divisible by {heads} heads");
        b.scope(name, |b| Block {
            dim,
            heads,
            ln1: LayerNorm::new(b, "ln1", dim),
            qkv: Linear::new(b, "qkv", dim, 3 * dim, 1.0),
            proj: Linear::new(b, "proj", dim, dim, 0.5),
            ln2: LayerNorm::new(b, "ln2", dim),
            mlp: Mlp::new(b, "mlp", (dim, MLP_RATIO * dim, dim), 0.5),
        })
    }

    pub fn forward(&self, t: &mut Tape, x: NodeId, segments: &[(usize, usize)], mode: AttentionMode) -> NodeId {
        let h = self.ln1.forward(t, x);
        let qkv = self.qkv.forward(t, h);
        let q = t.slice_cols(qkv, 0, self.dim);
        let k = t.slice_cols(qkv, self.dim, self.dim);
        let v = t.slice_cols(qkv, 2 * self.dim, self.dim);
        let a = t.attention(q, k, v, self.heads, segments, mode);
        let a = self.proj.forward(t, a);
        let x = t.add(x, a);
        let h = self.ln2.forward(t, x);
        let h = self.mlp.forward(t, h);
        t.add(x, h)
    }
}

/// A stack of blocks followed by a final layer norm.
#[derive(Debug, Clone)]
pub struct Transformer {
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
}

impl Transformer {
    pub fn new(b: &mut Builder, name: &str, dim: usize, depth: usize, heads: usize) -> Self {
        b.scope(name, |b| Transformer {
            blocks: (0..depth).map(|i| Block::new(b, &format!("block{i}"), dim, heads)).collect(),
            norm: LayerNorm::new(b, "norm", dim),
        })
    }

    pub fn forward(&self, t: &mut Tape, mut x: NodeId, segments: &[(usize, usize)], mode: AttentionMode) -> NodeId {
        for block in &self.blocks {
            x = block.forward(t, x, segments, mode);
        }
        self.norm.forward(t, x)
    }
}

/// Splits `n` rows into one segment (full attention).
pub fn single_segment(n: usize) -> Vec<(usize, usize)> {
    vec![(0, n)]
}

/// Splits `n` rows into consecutive segments of `len` rows.
pub fn uniform_segments(n: usize, len: usize) -> Vec<(usize, usize)> {
    (0..n / len).map(|i| (i * len, len)).collect()
}
