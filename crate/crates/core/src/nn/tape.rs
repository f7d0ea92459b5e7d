//! Reverse-mode differentiation over row-major `f64` matrices.
//!
//! A [`Tape`] records one forward pass. Parameters live in a
//! [`ParamStore`] that the tape borrows; [`Tape::backward`] returns their
//! gradients. Tapes are cheap to build, so every record in a batch gets its
//! own tape and the per-record gradients are summed afterwards.

use std::collections::HashMap;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    index: HashMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSnapshot {
    pub name: String,
    pub shape: (usize, usize),
    pub data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn snapshot(&self) -> Vec<ParamSnapshot> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| ParamSnapshot { name: n.clone(), shape: v.dim(), data: v.iter().copied().collect() })
            .collect()
    }

    /// Overwrites parameters by name. Every parameter of `self` must be
    /// present with a matching shape; extra entries are rejected.
    pub fn restore(&mut self, snapshot: &[ParamSnapshot]) -> Result<()> {
        if snapshot.len() != self.values.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors, model expects {}",
                snapshot.len(),
                self.values.len()
            )));
        }
        for p in snapshot {
            self.restore_one(p)?;
        }
        Ok(())
    }

    /// Overwrites the parameters listed in `snapshot` whose names start with
    /// `prefix`; returns how many were copied.
    pub fn restore_prefix(&mut self, snapshot: &[ParamSnapshot], prefix: &str) -> Result<usize> {
        let mut n = 0;
        for p in snapshot.iter().filter(|p| p.name.starts_with(prefix)) {
            self.restore_one(p)?;
            n += 1;
        }
        Ok(n)
    }

    fn restore_one(&mut self, p: &ParamSnapshot) -> Result<()> {
        let id =
            self.find(&p.name).ok_or_else(|| Error::Config(format!("unexpected tensor {} in checkpoint", p.name)))?;
        if self.values[id.0].dim() != p.shape || p.data.len() != p.shape.0 * p.shape.1 {
            return Err(Error::Config(format!(
                "tensor {} has shape {:?} in checkpoint but {:?} in the model",
                p.name,
                p.shape,
                self.values[id.0].dim()
            )));
        }
        self.values[id.0] =
            Array2::from_shape_vec(p.shape, p.data.clone()).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

/// Gradients for every parameter of a store.
#[derive(Debug, Clone)]
pub struct Grads(pub Vec<Array2<f64>>);

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads(store.values.iter().map(|v| Array2::zeros(v.dim())).collect())
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.0[id.0]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in &mut self.0 {
            a.mapv_inplace(|x| x * c);
        }
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|a| a.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|a| a.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId, Array2<f64>),
    Relu(NodeId),
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Array2<f64>, inv_std: Vec<f64> },
    Attention { q: NodeId, k: NodeId, v: NodeId, heads: usize, segments: Vec<(usize, usize)>, probs: Vec<Array2<f64>> },
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize),
    ConcatRows(Vec<NodeId>),
    Gather(NodeId, Vec<usize>),
    SegmentMax { x: NodeId, argmax: Array2<usize> },
    SegmentMean { x: NodeId, seg: usize },
}

struct Node {
    value: Option<Array2<f64>>,
    op: Op,
    /// Whether any parameter feeds this node.
    needs_grad: bool,
}

/// How attention weights are formed. `Uniform` replaces the softmax with
/// equal weights; it exists to test degenerate attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionMode {
    #[default]
    Softmax,
    Uniform,
}

pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)

/// `tanh` of the GELU argument; `1 - 2/(e^{2u}+1)` is several times faster
/// than `f64::tanh` and saturates correctly.
fn gelu_tanh(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    1.0 - 2.0 / ((2.0 * u).exp() + 1.0)
}

fn gelu_grad(x: f64, t: f64) -> f64 {
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Tape { store, nodes: Vec::with_capacity(256) }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        match &self.nodes[id].op {
            Op::Param(p) => self.store.get(*p),
            _ => self.nodes[id].value.as_ref().expect("non-parameter nodes hold a value"),
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        let needs_grad = self.inputs_of(&op).iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node { value: Some(value), op, needs_grad });
        self.nodes.len() - 1
    }

    fn inputs_of(&self, op: &Op) -> Vec<NodeId> {
        match op {
            Op::Input | Op::Param(_) => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::Gelu(x, _)
            | Op::Relu(x)
            | Op::SliceCols(x, _)
            | Op::Gather(x, _)
            | Op::SegmentMax { x, .. }
            | Op::SegmentMean { x, .. } => vec![*x],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
            Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.clone(),
        }
    }

    pub fn input(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.nodes.push(Node { value: None, op: Op::Param(id), needs_grad: true });
        self.nodes.len() - 1
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// `x + bias` with a `1 × n` bias broadcast over rows.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        debug_assert_eq!(self.value(bias).nrows(), 1);
        let v = self.value(x) + self.value(bias);
        self.push(v, Op::AddRow(x, bias))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x) * c;
        self.push(v, Op::Scale(x, c))
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let th = xv.mapv(gelu_tanh);
        let mut v = xv.to_owned();
        Zip::from(&mut v).and(&th).for_each(|v, &t| *v *= 0.5 * (1.0 + t));
        self.push(v, Op::Gelu(x, th))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).mapv(|v| v.max(0.0));
        self.push(v, Op::Relu(x))
    }

    /// Row-wise layer normalization with `1 × n` gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = xv.to_owned();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| v * is);
            inv_std.push(is);
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    /// Multi-head scaled dot-product attention restricted to contiguous
    /// row `segments` (tokens only attend within their own segment).
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        segments: &[(usize, usize)],
        mode: AttentionMode,
    ) -> NodeId {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.ncols();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Array2::zeros(vv.dim());
        let mut probs = Vec::with_capacity(segments.len() * heads);
        for &(start, len) in segments {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qs = qv.slice(s![start..start + len, cols.clone()]);
                let ks = kv.slice(s![start..start + len, cols.clone()]);
                let vs = vv.slice(s![start..start + len, cols.clone()]);
                let p = match mode {
                    AttentionMode::Softmax => {
                        let mut sc = qs.dot(&ks.t()) * scale;
                        softmax_rows(&mut sc);
                        sc
                    }
                    AttentionMode::Uniform => Array2::from_elem((len, len), 1.0 / len as f64),
                };
                out.slice_mut(s![start..start + len, cols]).assign(&p.dot(&vs));
                probs.push(p);
            }
        }
        self.push(out, Op::Attention { q, k, v, heads, segments: segments.to_vec(), probs })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(x).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols(x, start))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("column counts agree");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    /// `out[i] = x[index[i]]`.
    pub fn gather_rows(&mut self, x: NodeId, index: &[usize]) -> NodeId {
        let v = self.value(x).select(Axis(0), index);
        self.push(v, Op::Gather(x, index.to_vec()))
    }

    /// Column-wise max over consecutive groups of `seg` rows.
    pub fn segment_max(&mut self, x: NodeId, seg: usize) -> NodeId {
        let xv = self.value(x);
        let groups = xv.nrows() / seg;
        debug_assert_eq!(groups * seg, xv.nrows());
        let cols = xv.ncols();
        let mut out = Array2::from_elem((groups, cols), f64::NEG_INFINITY);
        let mut argmax = Array2::zeros((groups, cols));
        for g in 0..groups {
            for r in g * seg..(g + 1) * seg {
                let row = xv.row(r);
                for c in 0..cols {
                    // strict comparison: ties keep the first row
                    if row[c] > out[(g, c)] {
                        out[(g, c)] = row[c];
                        argmax[(g, c)] = r;
                    }
                }
            }
        }
        self.push(out, Op::SegmentMax { x, argmax })
    }

    /// Column-wise mean over consecutive groups of `seg` rows.
    pub fn segment_mean(&mut self, x: NodeId, seg: usize) -> NodeId {
        let xv = self.value(x);
        let groups = xv.nrows() / seg;
        let out = xv
            .to_shape((groups, seg, xv.ncols()))
            .expect("rows split evenly")
            .mean_axis(Axis(1))
            .expect("non-empty segments");
        self.push(out, Op::SegmentMean { x, seg })
    }

    /// Back-propagates `seed` (the gradient of a scalar objective with
    /// respect to `output`) and returns parameter gradients.
    pub fn backward(&self, output: NodeId, seed: Array2<f64>) -> Grads {
        let mut param_grads = Grads::zeros_like(self.store);
        self.backward_into(output, seed, &mut param_grads);
        param_grads
    }

    pub fn backward_into(&self, output: NodeId, seed: Array2<f64>, param_grads: &mut Grads) {
        assert_eq!(seed.dim(), self.value(output).dim(), "seed shape");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output] = Some(seed);
        for id in (0..=output).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, g, &mut grads, param_grads);
        }
    }

    fn propagate(&self, id: NodeId, g: Array2<f64>, grads: &mut [Option<Array2<f64>>], param_grads: &mut Grads) {
        let nodes = &self.nodes;
        let acc = |grads: &mut [Option<Array2<f64>>], id: NodeId, g: Array2<f64>| {
            if !nodes[id].needs_grad {
                return;
            }
            match &mut grads[id] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        };
        match &self.nodes[id].op {
            Op::Input => {}
            Op::Param(p) => param_grads.0[p.0] += &g,
            Op::MatMul(a, b) => {
                if self.nodes[*a].needs_grad {
                    acc(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.nodes[*b].needs_grad {
                    acc(grads, *b, self.value(*a).t().dot(&g));
                }
            }
            Op::Add(a, b) => {
                acc(grads, *b, g.clone());
                acc(grads, *a, g);
            }
            Op::AddRow(x, bias) => {
                let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                acc(grads, *bias, gb);
                acc(grads, *x, g);
            }
            Op::Mul(a, b) => {
                let ga = &g * self.value(*b);
                let gb = &g * self.value(*a);
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::Scale(x, c) => acc(grads, *x, g * *c),
            Op::Gelu(x, th) => {
                let mut gx = g;
                Zip::from(&mut gx).and(self.value(*x)).and(th).for_each(|gi, &xi, &t| *gi *= gelu_grad(xi, t));
                acc(grads, *x, gx);
            }
            Op::Relu(x) => {
                let mut gx = g;
                Zip::from(&mut gx).and(self.value(*x)).for_each(|gi, &xi| {
                    if xi <= 0.0 {
                        *gi = 0.0;
                    }
                });
                acc(grads, *x, gx);
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let gamma_v = self.value(*gamma);
                acc(grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                acc(grads, *gamma, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                let n = xhat.ncols() as f64;
                let mut dxhat = g * gamma_v;
                for (r, mut row) in dxhat.rows_mut().into_iter().enumerate() {
                    let xr = xhat.row(r);
                    let sum = row.sum();
                    let dot = row.dot(&xr);
                    let is = inv_std[r];
                    Zip::from(&mut row).and(&xr).for_each(|d, &xh| *d = is / n * (n * *d - sum - xh * dot));
                }
                acc(grads, *x, dxhat);
            }
            Op::Attention { q, k, v, heads, segments, probs } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let dh = qv.ncols() / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut gq = Array2::zeros(qv.dim());
                let mut gk = Array2::zeros(kv.dim());
                let mut gv = Array2::zeros(vv.dim());
                let mut pi = 0;
                for &(start, len) in segments {
                    for h in 0..*heads {
                        let rows = start..start + len;
                        let cols = h * dh..(h + 1) * dh;
                        let p = &probs[pi];
                        pi += 1;
                        let go = g.slice(s![rows.clone(), cols.clone()]);
                        let vs = vv.slice(s![rows.clone(), cols.clone()]);
                        let qs = qv.slice(s![rows.clone(), cols.clone()]);
                        let ks = kv.slice(s![rows.clone(), cols.clone()]);
                        gv.slice_mut(s![rows.clone(), cols.clone()]).assign(&p.t().dot(&go));
                        let dp = go.dot(&vs.t());
                        let mut ds = &dp * p;
                        let rowsum = ds.sum_axis(Axis(1));
                        for (r, mut row) in ds.rows_mut().into_iter().enumerate() {
                            let pr = p.row(r);
                            Zip::from(&mut row).and(&pr).for_each(|d, &pp| *d -= pp * rowsum[r]);
                        }
                        ds *= scale;
                        gq.slice_mut(s![rows.clone(), cols.clone()]).assign(&ds.dot(&ks));
                        gk.slice_mut(s![rows, cols]).assign(&ds.t().dot(&qs));
                    }
                }
                acc(grads, *q, gq);
                acc(grads, *k, gk);
                acc(grads, *v, gv);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    acc(grads, p, g.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::SliceCols(x, start) => {
                let xv = self.value(*x);
                let mut gx = Array2::zeros(xv.dim());
                gx.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                acc(grads, *x, gx);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let h = self.value(p).nrows();
                    acc(grads, p, g.slice(s![start..start + h, ..]).to_owned());
                    start += h;
                }
            }
            Op::Gather(x, index) => {
                let xv = self.value(*x);
                let mut gx = Array2::zeros(xv.dim());
                for (i, &src) in index.iter().enumerate() {
                    let mut row = gx.row_mut(src);
                    row += &g.row(i);
                }
                acc(grads, *x, gx);
            }
            Op::SegmentMax { x, argmax } => {
                let xv = self.value(*x);
                let mut gx = Array2::zeros(xv.dim());
                for ((gi, c), &r) in argmax.indexed_iter() {
                    gx[(r, c)] += g[(gi, c)];
                }
                acc(grads, *x, gx);
            }
            Op::SegmentMean { x, seg } => {
                let xv = self.value(*x);
                let mut gx = Array2::zeros(xv.dim());
                let inv = 1.0 / *seg as f64;
                for r in 0..xv.nrows() {
                    let mut row = gx.row_mut(r);
                    row.scaled_add(inv, &g.row(r / seg));
                }
                acc(grads, *x, gx);
            }
        }
    }
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}
