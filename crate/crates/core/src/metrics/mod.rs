//! Evaluation metrics: vertex distances (ADD, PA-ADD), parameter agreement
//! (CSA, rotation error), arch-curve Fréchet distance, and the cumulative
//! distance distribution.

mod curve;
mod params;
mod vertex;

pub use curve::{
    arch_curve, arch_curve_with, discrete_frechet, fd_cur_metric, hausdorff, ArchCurve, DEFAULT_CURVE_SAMPLES,
};
pub use params::{cosine_similarity, csa_accuracy, csa_metric, me_rot_metric, rotation_error_deg};
pub use vertex::{add_metric, kabsch, pa_add_metric, PaAdd, Registration, RigidTransform};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{align, JawModel, TransformParams};

/// Metrics of one predicted dentition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMetrics {
    pub id: String,
    pub add: f64,
    pub pa_add: f64,
    /// PA-ADD used the translation-only fallback.
    pub pa_translation_only: bool,
    pub csa: f64,
    pub me_rot: f64,
    pub fd_cur: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub curve_samples: usize,
    /// When set, CSA is the fraction of teeth with cosine similarity at or
    /// above this value instead of the mean similarity.
    pub csa_threshold: Option<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { curve_samples: DEFAULT_CURVE_SAMPLES, csa_threshold: None }
    }
}

/// Applies `pred` to `input` and scores the result against `gt`.
pub fn evaluate_record(
    id: &str,
    input: &JawModel,
    gt: &JawModel,
    pred: &TransformParams,
    gt_params: &TransformParams,
    opts: &EvalOptions,
) -> Result<RecordMetrics> {
    let moved = align(input, pred)?;
    let pa = pa_add_metric(&moved, gt)?;
    let csa = match opts.csa_threshold {
        Some(th) => csa_accuracy(pred, gt_params, th)?,
        None => csa_metric(pred, gt_params)?,
    };
    Ok(RecordMetrics {
        id: id.to_string(),
        add: add_metric(&moved, gt)?,
        pa_add: pa.value,
        pa_translation_only: pa.registration.translation_only,
        csa,
        me_rot: me_rot_metric(pred, gt_params)?,
        fd_cur: fd_cur_metric(&moved, gt, opts.curve_samples)?,
    })
}

/// One item of a corpus evaluation.
pub struct EvalItem<'a> {
    pub id: &'a str,
    pub input: &'a JawModel,
    pub gt: &'a JawModel,
    pub pred: &'a TransformParams,
    pub gt_params: &'a TransformParams,
}

pub fn evaluate_corpus(items: &[EvalItem<'_>], opts: &EvalOptions) -> Result<MetricsReport> {
    if items.is_empty() {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    let records =
        exec::map_indexed(items, |_, it| evaluate_record(it.id, it.input, it.gt, it.pred, it.gt_params, opts))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::new(records))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation.
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return MeanStd { mean: f64::NAN, std: f64::NAN };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub add: MeanStd,
    pub pa_add: MeanStd,
    pub csa: MeanStd,
    pub me_rot: MeanStd,
    pub fd_cur: MeanStd,
    pub translation_only_fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub records: Vec<RecordMetrics>,
    pub summary: Summary,
}

impl MetricsReport {
    pub fn new(records: Vec<RecordMetrics>) -> Self {
        let col = |f: fn(&RecordMetrics) -> f64| MeanStd::of(&records.iter().map(f).collect::<Vec<_>>());
        let summary = Summary {
            add: col(|r| r.add),
            pa_add: col(|r| r.pa_add),
            csa: col(|r| r.csa),
            me_rot: col(|r| r.me_rot),
            fd_cur: col(|r| r.fd_cur),
            translation_only_fallbacks: records.iter().filter(|r| r.pa_translation_only).count(),
        };
        MetricsReport { records, summary }
    }

    /// Per-record table followed by a mean ± std summary.
    pub fn to_text(&self) -> String {
        let mut s = String::from("id\tADD\tPA-ADD\tCSA\tME_rot\tFD_cur\n");
        for r in &self.records {
            let flag = if r.pa_translation_only { "*" } else { "" };
            let _ = writeln!(
                s,
                "{}\t{:.4}\t{:.4}{flag}\t{:.4}\t{:.4}\t{:.4}",
                r.id, r.add, r.pa_add, r.csa, r.me_rot, r.fd_cur
            );
        }
        let m = &self.summary;
        let _ = writeln!(s, "\nmetric\tmean\tstd");
        for (name, v) in
            [("ADD", m.add), ("PA-ADD", m.pa_add), ("CSA", m.csa), ("ME_rot", m.me_rot), ("FD_cur", m.fd_cur)]
        {
            let _ = writeln!(s, "{name}\t{:.4}\t{:.4}", v.mean, v.std);
        }
        if m.translation_only_fallbacks > 0 {
            let _ = writeln!(
                s,
                "* PA-ADD fell back to translation-only registration ({} records)",
                m.translation_only_fallbacks
            );
        }
        s
    }
}

/// Fraction of `distances` at or below each threshold in `edges` (strictly
/// increasing).
pub fn distance_histogram(distances: &[f64], edges: &[f64]) -> Result<Vec<(f64, f64)>> {
    if distances.is_empty() {
        return Err(Error::Config("no distances to summarize".into()));
    }
    if edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("bin edges must be strictly increasing".into()));
    }
    let n = distances.len() as f64;
    Ok(edges.iter().map(|&e| (e, distances.iter().filter(|&&d| d <= e).count() as f64 / n)).collect())
}
