//! End-to-end helpers shared by the command-line driver and the acceptance
//! suite: pretraining, fitting, prediction, evaluation and the iterative
//! refinement loop.

use std::collections::BTreeMap;

use crate::diffusion::{train, Model, ModelConfig, TrainConfig, TrainData, TrainState};
use crate::encoders::{pretrain_mae, MaeConfig, MaeOutcome};
use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{align, so3_exp, so3_log, JawModel, Mat3, ToothMesh, TransformParams, Vec3};
use crate::metrics::{evaluate_corpus, evaluate_record, EvalItem, EvalOptions, MetricsReport, RecordMetrics};
use crate::nn::ParamSnapshot;
use crate::seeds;
use crate::synth::DatasetRecord;

/// Ground-truth teeth of the distinct patients among `records`, capped at
/// `max_teeth` (`0` keeps all).
pub fn pretraining_teeth(records: &[&DatasetRecord], max_teeth: usize) -> Vec<ToothMesh> {
    let mut seen = std::collections::BTreeSet::new();
    let mut teeth = Vec::new();
    for r in records {
        if seen.insert(r.patient) {
            teeth.extend(r.gt.teeth.values().cloned());
        }
    }
    if max_teeth > 0 && teeth.len() > max_teeth {
        // even stride keeps every tooth class represented
        teeth = (0..max_teeth).map(|i| teeth[i * teeth.len() / max_teeth].clone()).collect();
    }
    teeth
}

pub fn pretrain(
    records: &[&DatasetRecord],
    model: &ModelConfig,
    mae: &MaeConfig,
    max_teeth: usize,
) -> Result<MaeOutcome> {
    let teeth = pretraining_teeth(records, max_teeth);
    pretrain_mae(&teeth, &model.encoder, mae)
}

/// Builds a model, optionally loads pretrained local-encoder weights, and
/// trains it. `resume` continues from a saved training state; its model
/// weights must already be in `resume_params`.
pub fn fit(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    records: &[&DatasetRecord],
    local_weights: Option<&[ParamSnapshot]>,
    resume: Option<(Vec<ParamSnapshot>, TrainState)>,
    on_epoch: impl FnMut(&Model, &TrainState) -> Result<()>,
) -> Result<(Model, TrainState)> {
    let mut model = Model::new(model_cfg)?;
    let state = match resume {
        Some((params, state)) => {
            model.store.restore(&params)?;
            Some(state)
        }
        None => {
            if let Some(w) = local_weights {
                if model.load_local_weights(w)? == 0 {
                    return Err(Error::Config("pretrained weights do not match the local encoder".into()));
                }
            }
            None
        }
    };
    let data = TrainData::new(&model, records, train_cfg.loss_vertices)?;
    let state = train(&mut model, &data, train_cfg, state, on_epoch)?;
    Ok((model, state))
}

/// Sampler seed of one record, derived from the run seed and the record id.
pub fn record_seed(seed: u64, id: &str) -> u64 {
    let h = id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    seeds::derive(seed, &[h])
}

pub fn predict_inputs(model: &Model, inputs: &[(&str, &JawModel)], seed: u64) -> Result<Vec<TransformParams>> {
    exec::map_indexed(inputs, |_, (id, input)| model.predict(input, record_seed(seed, id))).into_iter().collect()
}

pub fn predict_records(model: &Model, records: &[&DatasetRecord], seed: u64) -> Result<Vec<TransformParams>> {
    let inputs: Vec<(&str, &JawModel)> = records.iter().map(|r| (r.id.as_str(), &r.input)).collect();
    predict_inputs(model, &inputs, seed)
}

fn report_for(records: &[&DatasetRecord], preds: &[TransformParams], opts: &EvalOptions) -> Result<MetricsReport> {
    let items: Vec<EvalItem> = records
        .iter()
        .zip(preds)
        .map(|(r, p)| EvalItem { id: &r.id, input: &r.input, gt: &r.gt, pred: p, gt_params: &r.z0 })
        .collect();
    evaluate_corpus(&items, opts)
}

/// Samples every record and scores the aligned result.
pub fn evaluate_model(
    model: &Model,
    records: &[&DatasetRecord],
    seed: u64,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    let preds = predict_records(model, records, seed)?;
    report_for(records, &preds, opts)
}

/// Scores the unmoved inputs (zero transforms).
pub fn identity_report(records: &[&DatasetRecord], opts: &EvalOptions) -> Result<MetricsReport> {
    let preds: Vec<TransformParams> = records.iter().map(|r| TransformParams::zeros(&r.input.labels())).collect();
    report_for(records, &preds, opts)
}

/// One round of the iterative experiment.
#[derive(Debug, Clone)]
pub struct Round {
    pub round: usize,
    pub prediction: TransformParams,
    pub output: JawModel,
    pub metrics: RecordMetrics,
}

/// Feeds each round's aligned output back in as the next input. CSA and
/// rotation error of round `k` compare the round's prediction with the
/// residual transform still needed to reach the ground truth.
pub fn iterate(
    model: &Model,
    record: &DatasetRecord,
    rounds: usize,
    seed: u64,
    opts: &EvalOptions,
) -> Result<Vec<Round>> {
    if rounds == 0 {
        return Err(Error::Config("rounds must be at least 1".into()));
    }
    let mut cumulative: BTreeMap<_, (Mat3, Vec3)> =
        record.input.labels().into_iter().map(|l| (l, (Mat3::identity(), Vec3::zeros()))).collect();
    let mut input = record.input.clone();
    let mut out = Vec::with_capacity(rounds);
    for round in 1..=rounds {
        let residual = TransformParams {
            per_tooth: record
                .z0
                .per_tooth
                .iter()
                .map(|(l, z)| {
                    let (rc, mc) = cumulative[l];
                    let r = so3_log(&(so3_exp(&Vec3::new(z[3], z[4], z[5])) * rc.transpose()));
                    (*l, [z[0] - mc.x, z[1] - mc.y, z[2] - mc.z, r.x, r.y, r.z])
                })
                .collect(),
        };
        // round 1 reuses the evaluation seed so it reproduces `evaluate_model`
        let id = if round == 1 { record.id.clone() } else { format!("{}#{round}", record.id) };
        let prediction = model.predict(&input, record_seed(seed, &id))?;
        let metrics = evaluate_record(&id, &input, &record.gt, &prediction, &residual, opts)?;
        for (l, z) in &prediction.per_tooth {
            let c = cumulative.get_mut(l).expect("same labels");
            c.0 = so3_exp(&Vec3::new(z[3], z[4], z[5])) * c.0;
            c.1 += Vec3::new(z[0], z[1], z[2]);
        }
        let output = align(&input, &prediction)?;
        input = output.clone();
        out.push(Round { round, prediction, output, metrics });
    }
    Ok(out)
}
