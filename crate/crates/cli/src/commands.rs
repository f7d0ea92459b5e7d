use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use archdiff::diffusion::{loss_table, Checkpoint, EpochLoss, Model, TrainState};
use archdiff::encoders::MaeReport;
use archdiff::experiment;
use archdiff::geometry::{align, write_jaw, Vec3};
use archdiff::metrics::{distance_histogram, MetricsReport};
use archdiff::nn::ParamSnapshot;
use archdiff::synth::{
    build_dataset, load_dataset, manifest_json, plan_corpus, read_manifest, z0_string, Dataset, DatasetRecord,
    MANIFEST_FILE,
};
use archdiff::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::plot::{cumulative_svg, Series};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const MAE_FILE: &str = "mae.json";
pub const LOSS_CURVE_FILE: &str = "loss_curve.tsv";

fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e.to_string()))?;
    write_file(path, &(text + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

/// Echoes lines to stdout and appends them to a log file.
struct Log {
    file: fs::File,
}

impl Log {
    fn open(path: &Path) -> Result<Log> {
        let file = fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        Ok(Log { file })
    }

    fn line(&mut self, s: &str) {
        println!("{s}");
        let _ = writeln!(self.file, "{s}");
    }
}

pub fn gen_data(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.data_dir();
    let manifest = plan_corpus(&cfg.corpus, &cfg.arch, &cfg.perturb)?;
    let text = manifest_json(&manifest);
    let hash = sha256_hex(&text);
    let n_test = manifest.records.iter().filter(|r| r.split == archdiff::synth::Split::Test).count();
    let n_train = manifest.records.len() - n_test;

    let existing = fs::read_to_string(dir.join(MANIFEST_FILE)).ok();
    let complete = manifest.records.iter().all(|r| dir.join("records").join(&r.id).join("z0.txt").is_file());
    if existing.as_deref() == Some(text.as_str()) && complete {
        println!("{}: up-to-date, no changes", dir.display());
        println!("records {} (train {n_train}, test {n_test})", manifest.records.len());
        println!("manifest sha256 {hash}");
        return Ok(());
    }
    let dataset = build_dataset(&cfg.corpus, &cfg.arch, &cfg.perturb, &dir)?;
    println!("wrote {}", dir.join(MANIFEST_FILE).display());
    println!("records {} (train {}, test {})", dataset.records.len(), dataset.train().len(), dataset.test().len());
    println!("manifest sha256 {hash}");
    Ok(())
}

/// Loads the dataset and checks that it was generated from this config.
fn open_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let dir = cfg.data_dir();
    if !dir.join(MANIFEST_FILE).is_file() {
        return Err(Error::io(
            dir.join(MANIFEST_FILE),
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset not found (run gen-data first)"),
        ));
    }
    let manifest = read_manifest(&dir)?;
    if manifest.corpus != cfg.corpus || manifest.arch != cfg.arch || manifest.perturb != cfg.perturb {
        return Err(Error::Config(format!(
            "dataset at {} was generated with different corpus/arch/perturb settings",
            dir.display()
        )));
    }
    load_dataset(&dir)
}

/// Saved result of masked-autoencoder pretraining.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MaeFile {
    data_hash: String,
    encoder: archdiff::encoders::EncoderConfig,
    mae: archdiff::encoders::MaeConfig,
    max_teeth: usize,
    report: MaeReport,
    weights: Vec<ParamSnapshot>,
}

impl MaeFile {
    fn matches(&self, cfg: &RunConfig) -> bool {
        self.data_hash == cfg.data_hash()
            && self.encoder == cfg.model.encoder
            && self.mae == cfg.pretrain.mae
            && self.max_teeth == cfg.pretrain.max_teeth
    }
}

fn run_pretrain(cfg: &RunConfig, dataset: &Dataset) -> Result<MaeFile> {
    let train = dataset.train();
    let outcome = experiment::pretrain(&train, &cfg.model, &cfg.pretrain.mae, cfg.pretrain.max_teeth)?;
    let r = &outcome.report;
    println!("mae: {} epochs, reconstruction loss {:.4} -> {:.4}", r.epoch_losses.len(), r.initial_loss, r.final_loss);
    let file = MaeFile {
        data_hash: cfg.data_hash(),
        encoder: cfg.model.encoder.clone(),
        mae: cfg.pretrain.mae.clone(),
        max_teeth: cfg.pretrain.max_teeth,
        report: outcome.report.clone(),
        weights: outcome.encoder_weights(),
    };
    let path = cfg.run_dir().join(MAE_FILE);
    write_json(&path, &file)?;
    println!("wrote {}", path.display());
    Ok(file)
}

pub fn pretrain(cfg: &RunConfig) -> Result<()> {
    if cfg.model.flags.local != archdiff::encoders::LocalKind::Mesh {
        return Err(Error::Config("pretraining applies to the mesh local encoder only".into()));
    }
    let dataset = open_dataset(cfg)?;
    create_dir(&cfg.run_dir())?;
    run_pretrain(cfg, &dataset).map(|_| ())
}

/// Tags of training choices that are not part of the model architecture.
fn training_tags(cfg: &RunConfig) -> Vec<String> {
    let mut tags = Vec::new();
    if !cfg.pretrain.enabled && cfg.model.flags.local == archdiff::encoders::LocalKind::Mesh {
        tags.push("no-mae".to_string());
    }
    let w = &cfg.train.weights;
    let kept: Vec<&str> =
        [("cd", w.cd), ("diff", w.diff), ("pos", w.pos)].iter().filter(|(_, v)| *v != 0.0).map(|(n, _)| *n).collect();
    if kept.len() < 3 {
        tags.push(format!("loss={}", kept.join(",")));
    }
    tags
}

fn architecture_with_tags(cfg: &RunConfig) -> String {
    let mut parts = vec![cfg.model.architecture_tag()];
    parts.extend(training_tags(cfg));
    parts.join("+")
}

/// Training config with the epoch count blanked, for resume compatibility.
fn resume_key(cfg: &archdiff::diffusion::TrainConfig) -> archdiff::diffusion::TrainConfig {
    archdiff::diffusion::TrainConfig { epochs: 0, ..cfg.clone() }
}

fn existing_state(cfg: &RunConfig, path: &Path) -> Result<Option<(Vec<ParamSnapshot>, TrainState)>> {
    if !path.is_file() {
        return Ok(None);
    }
    let ck = Checkpoint::load(path)?;
    let compatible = ck.config == cfg.model
        && ck.architecture == architecture_with_tags(cfg)
        && ck.train_config.as_ref().map(resume_key) == Some(resume_key(&cfg.train));
    if !compatible {
        return Err(Error::Config(format!(
            "{} was written with a different configuration; pass --fresh to start over",
            path.display()
        )));
    }
    Ok(ck.train_state.map(|s| (ck.params, s)))
}

pub fn train(cfg: &RunConfig, fresh: bool) -> Result<()> {
    let dataset = open_dataset(cfg)?;
    let run = cfg.run_dir();
    create_dir(&run)?;
    write_file(&run.join("config.toml"), &cfg.to_toml())?;
    let ck_path = run.join(CHECKPOINT_FILE);
    let mut log = Log::open(&run.join("train.log"))?;
    let train_records = dataset.train();
    log.line(&format!(
        "train: {} records, epochs {}, batch {}, lr {:e}, architecture {}",
        train_records.len(),
        cfg.train.epochs,
        cfg.train.batch_size,
        cfg.train.optimizer.lr,
        architecture_with_tags(cfg)
    ));

    let resume = if fresh { None } else { existing_state(cfg, &ck_path)? };
    if let Some((_, s)) = &resume {
        if s.epochs_done >= cfg.train.epochs {
            log.line(&format!("already trained for {} epochs: {}", s.epochs_done, ck_path.display()));
            return Ok(());
        }
        log.line(&format!("resuming after epoch {}", s.epochs_done));
    }

    let mut local = None;
    let use_mae = cfg.pretrain.enabled && cfg.model.flags.local == archdiff::encoders::LocalKind::Mesh;
    if resume.is_none() && use_mae {
        let mae_path = run.join(MAE_FILE);
        let cached = if mae_path.is_file() { read_json::<MaeFile>(&mae_path).ok() } else { None };
        let file = match cached {
            Some(f) if f.matches(cfg) => {
                log.line(&format!("using pretrained local encoder from {}", mae_path.display()));
                f
            }
            _ => run_pretrain(cfg, &dataset)?,
        };
        local = Some(file.weights);
    }

    let tag = architecture_with_tags(cfg);
    let curve_path = run.join(LOSS_CURVE_FILE);
    log.line(EpochLoss::HEADER);
    let (_, state) = experiment::fit(
        &cfg.model,
        &cfg.train,
        &train_records,
        local.as_deref(),
        resume,
        |model: &Model, state: &TrainState| {
            if let Some(row) = state.curve.last() {
                log.line(&row.row());
            }
            let mut ck = model.checkpoint(Some((&cfg.train, state)));
            ck.architecture = tag.clone();
            ck.save(&ck_path)?;
            write_file(&curve_path, &loss_table(&state.curve))
        },
    )?;
    log.line(&format!("trained {} epochs: {}", state.epochs_done, ck_path.display()));
    Ok(())
}

/// Loads the run's checkpoint and checks it against the config.
fn open_model(cfg: &RunConfig, steps: Option<usize>) -> Result<Model> {
    let path = cfg.run_dir().join(CHECKPOINT_FILE);
    let ck = Checkpoint::load(&path)?;
    let mut expected = cfg.model.clone();
    expected.sample_steps = ck.config.sample_steps;
    if ck.config != expected {
        return Err(Error::Config(format!(
            "checkpoint {} ({}) does not match the configured model ({})",
            path.display(),
            ck.architecture,
            cfg.model.architecture_tag()
        )));
    }
    let mut model = Model::from_checkpoint(&ck)?;
    model.config.sample_steps = steps.unwrap_or(ck.config.sample_steps);
    model.config.validate()?;
    Ok(model)
}

fn find_record<'a>(dataset: &'a Dataset, id: Option<&str>) -> Result<&'a DatasetRecord> {
    match id {
        Some(id) => dataset
            .records
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| Error::Config(format!("no record {id:?} in the dataset"))),
        None => dataset.test().first().copied().ok_or_else(|| Error::Config("dataset has no test records".into())),
    }
}

pub fn sample(cfg: &RunConfig, id: Option<&str>, steps: Option<usize>) -> Result<()> {
    let dataset = open_dataset(cfg)?;
    let model = open_model(cfg, steps)?;
    let record = find_record(&dataset, id)?;
    let pred = model.predict(&record.input, experiment::record_seed(cfg.seed, &record.id))?;
    let out = cfg.run_dir().join("samples").join(&record.id);
    write_jaw(&align(&record.input, &pred)?, &out.join("pred"), Vec3::zeros())?;
    write_file(&out.join("params.txt"), &z0_string(&pred))?;
    let m = archdiff::metrics::evaluate_record(
        &record.id,
        &record.input,
        &record.gt,
        &pred,
        &record.z0,
        &cfg.eval.options(),
    )?;
    println!(
        "{}\tADD {:.4}\tPA-ADD {:.4}\tCSA {:.4}\tME_rot {:.4}\tFD_cur {:.4}",
        m.id, m.add, m.pa_add, m.csa, m.me_rot, m.fd_cur
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn summary_row(name: &str, r: &MetricsReport) -> String {
    let s = &r.summary;
    format!(
        "{name}\t{:.4}±{:.4}\t{:.4}±{:.4}\t{:.4}±{:.4}\t{:.4}±{:.4}\t{:.4}±{:.4}",
        s.add.mean,
        s.add.std,
        s.pa_add.mean,
        s.pa_add.std,
        s.csa.mean,
        s.csa.std,
        s.me_rot.mean,
        s.me_rot.std,
        s.fd_cur.mean,
        s.fd_cur.std
    )
}

fn histogram_table(names: &[String], adds: &[Vec<f64>], edges: &[f64]) -> Result<String> {
    let cols = adds.iter().map(|d| distance_histogram(d, edges)).collect::<Result<Vec<_>>>()?;
    let mut s = format!("threshold_mm\t{}\n", names.join("\t"));
    for (i, e) in edges.iter().enumerate() {
        let _ = write!(s, "{e}");
        for c in &cols {
            let _ = write!(s, "\t{}", c[i].1);
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn eval(cfg: &RunConfig, steps: Option<usize>) -> Result<()> {
    let dataset = open_dataset(cfg)?;
    let model = open_model(cfg, steps)?;
    let test = dataset.test();
    let opts = cfg.eval.options();
    let report = experiment::evaluate_model(&model, &test, cfg.seed, &opts)?;
    let identity = experiment::identity_report(&test, &opts)?;

    let out = cfg.run_dir().join("eval");
    create_dir(&out)?;
    let header = "method\tADD\tPA-ADD\tCSA\tME_rot\tFD_cur";
    let summary = format!(
        "{header}\n{}\n{}\n",
        summary_row(&model.config.architecture_tag(), &report),
        summary_row("identity", &identity)
    );
    write_file(&out.join("report.txt"), &format!("{}\n{summary}", report.to_text()))?;
    write_file(&out.join("summary.tsv"), &summary)?;
    write_json(&out.join("report.json"), &report)?;
    write_json(&out.join("identity.json"), &identity)?;
    let adds = |r: &MetricsReport| r.records.iter().map(|m| m.add).collect::<Vec<_>>();
    let table =
        histogram_table(&["model".into(), "identity".into()], &[adds(&report), adds(&identity)], &cfg.eval.bin_edges)?;
    write_file(&out.join("distances.tsv"), &table)?;
    print!("{summary}");
    println!("wrote {}", out.display());
    Ok(())
}

pub fn iterate(cfg: &RunConfig, rounds: usize, n_records: usize, steps: Option<usize>) -> Result<()> {
    if rounds == 0 {
        return Err(Error::Config("--rounds must be at least 1".into()));
    }
    let dataset = open_dataset(cfg)?;
    let model = open_model(cfg, steps)?;
    let opts = cfg.eval.options();
    let records: Vec<&DatasetRecord> = dataset.test().into_iter().take(n_records.max(1)).collect();
    let out = cfg.run_dir().join("iterate");
    let header = "round\tADD\tPA-ADD\tCSA\tME_rot\tFD_cur\n";
    let mut per_round: Vec<Vec<archdiff::metrics::RecordMetrics>> = vec![Vec::new(); rounds];
    for record in &records {
        let dir = out.join(&record.id);
        let traj = experiment::iterate(&model, record, rounds, cfg.seed, &opts)?;
        let mut table = String::from(header);
        for r in &traj {
            write_jaw(&r.output, &dir.join(format!("round_{}", r.round)), Vec3::zeros())?;
            let m = &r.metrics;
            let _ = writeln!(table, "{}\t{}\t{}\t{}\t{}\t{}", r.round, m.add, m.pa_add, m.csa, m.me_rot, m.fd_cur);
            per_round[r.round - 1].push(m.clone());
        }
        write_file(&dir.join("trajectory.tsv"), &table)?;
    }
    let mut table = String::from(header);
    for (i, ms) in per_round.into_iter().enumerate() {
        let s = MetricsReport::new(ms).summary;
        let _ = writeln!(
            table,
            "{}\t{}\t{}\t{}\t{}\t{}",
            i + 1,
            s.add.mean,
            s.pa_add.mean,
            s.csa.mean,
            s.me_rot.mean,
            s.fd_cur.mean
        );
    }
    write_file(&out.join("trajectory.tsv"), &table)?;
    print!("{table}");
    println!("wrote {} ({} records)", out.display(), records.len());
    Ok(())
}

/// Accepts a `report.json` written by `eval` or a directory containing one.
fn read_report(path: &Path) -> Result<MetricsReport> {
    let file: PathBuf = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
    read_json(&file)
}

pub fn plot_dist(reports: &[PathBuf], labels: &[String], edges: &[f64], out: &Path) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Config("plot-dist needs at least one report".into()));
    }
    if !labels.is_empty() && labels.len() != reports.len() {
        return Err(Error::Config(format!("{} labels given for {} reports", labels.len(), reports.len())));
    }
    let mut names = Vec::new();
    let mut adds = Vec::new();
    for (i, path) in reports.iter().enumerate() {
        let report = read_report(path)?;
        names.push(match labels.get(i) {
            Some(l) => l.clone(),
            None => {
                let p = if path.is_dir() { path.clone() } else { path.with_extension("") };
                p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| format!("series{i}"))
            }
        });
        adds.push(report.records.iter().map(|m| m.add).collect::<Vec<_>>());
    }
    let table = histogram_table(&names, &adds, edges)?;
    let series = names
        .iter()
        .zip(&adds)
        .map(|(n, d)| Ok(Series { name: n.clone(), points: distance_histogram(d, edges)? }))
        .collect::<Result<Vec<_>>>()?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(out, &cumulative_svg(&series, "mean pointwise distance (mm)", "fraction of cases"))?;
    let table_path = out.with_extension("tsv");
    write_file(&table_path, &table)?;
    print!("{table}");
    println!("wrote {} and {}", out.display(), table_path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_follow_flags() {
        let mut c = RunConfig::desk();
        assert_eq!(architecture_with_tags(&c), c.model.architecture_tag());
        c.pretrain.enabled = false;
        c.train.weights.cd = 0.0;
        assert!(architecture_with_tags(&c).ends_with("+no-mae+loss=diff,pos"));
    }
}
