//! In-memory corpora and their on-disk layout:
//!
//! ```text
//! <root>/manifest.json
//! <root>/records/<id>/gt/<fdi>.obj      (+ jaw.json)
//! <root>/records/<id>/input/<fdi>.obj   (+ jaw.json)
//! <root>/records/<id>/z0.txt            |K| rows: mx my mz rx ry rz
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{generate_jaw, perturb, ArchSpec, DatasetRecord, PerturbSpec};
use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{read_jaw, write_jaw, TransformParams, Vec3};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub n_patients: usize,
    /// Fraction of patients held out for testing (rounded, at least one
    /// when there are two or more patients).
    pub test_fraction: f64,
    /// Base seed of the ground-truth jaws; patient `i` uses `seed + i`.
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec { n_patients: 50, test_fraction: 0.1, seed: 0 }
    }
}

impl CorpusSpec {
    pub fn n_test_patients(&self) -> usize {
        if self.n_patients < 2 {
            return 0;
        }
        ((self.n_patients as f64 * self.test_fraction).round() as usize).clamp(1, self.n_patients - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub id: String,
    pub patient: usize,
    pub split: Split,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub corpus: CorpusSpec,
    pub arch: ArchSpec,
    pub perturb: PerturbSpec,
    pub records: Vec<RecordEntry>,
}

impl DatasetManifest {
    pub fn ids(&self, split: Split) -> Vec<String> {
        self.records.iter().filter(|r| r.split == split).map(|r| r.id.clone()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&DatasetRecord> {
        self.manifest.records.iter().zip(&self.records).filter(|(e, _)| e.split == split).map(|(_, r)| r).collect()
    }

    pub fn train(&self) -> Vec<&DatasetRecord> {
        self.split(Split::Train)
    }

    pub fn test(&self) -> Vec<&DatasetRecord> {
        self.split(Split::Test)
    }
}

/// Lays out record ids, patients, splits and seeds; record `i` is perturbed
/// with seed `perturb.seed + i`.
pub fn plan_corpus(corpus: &CorpusSpec, arch: &ArchSpec, perturb: &PerturbSpec) -> Result<DatasetManifest> {
    arch.validate()?;
    perturb.validate()?;
    if corpus.n_patients == 0 {
        return Err(Error::Config("n_patients must be at least 1".into()));
    }
    let n_train = corpus.n_patients - corpus.n_test_patients();
    let mut records = Vec::with_capacity(corpus.n_patients * perturb.pairs_per_model);
    for patient in 0..corpus.n_patients {
        for pair in 0..perturb.pairs_per_model {
            let index = records.len() as u64;
            records.push(RecordEntry {
                id: format!("p{patient:04}_r{pair:02}"),
                patient,
                split: if patient < n_train { Split::Train } else { Split::Test },
                seed: perturb.seed.wrapping_add(index),
            });
        }
    }
    Ok(DatasetManifest {
        version: MANIFEST_VERSION,
        corpus: corpus.clone(),
        arch: arch.clone(),
        perturb: perturb.clone(),
        records,
    })
}

/// Generates the whole corpus in memory. Records are independent and
/// generated in parallel; the result does not depend on the thread count.
pub fn generate_dataset(corpus: &CorpusSpec, arch: &ArchSpec, perturb_spec: &PerturbSpec) -> Result<Dataset> {
    let manifest = plan_corpus(corpus, arch, perturb_spec)?;
    let jaws = exec::map_range(corpus.n_patients, |p| {
        generate_jaw(arch, corpus.seed.wrapping_add(p as u64)).map(|mut j| {
            j.sample_id = format!("p{p:04}");
            j
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let records = exec::map_indexed(&manifest.records, |_, e| {
        perturb(&jaws[e.patient], perturb_spec, e.seed).map(|mut r| {
            r.id = e.id.clone();
            r.patient = e.patient;
            r
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { manifest, records })
}

pub fn z0_string(z0: &TransformParams) -> String {
    let mut s = String::new();
    for z in z0.per_tooth.values() {
        let _ = writeln!(s, "{} {} {} {} {} {}", z[0], z[1], z[2], z[3], z[4], z[5]);
    }
    s
}

fn record_dir(root: &Path, id: &str) -> PathBuf {
    root.join("records").join(id)
}

pub fn write_record(root: &Path, record: &DatasetRecord) -> Result<()> {
    let dir = record_dir(root, &record.id);
    write_jaw(&record.gt, &dir.join("gt"), Vec3::zeros())?;
    write_jaw(&record.input, &dir.join("input"), Vec3::zeros())?;
    let path = dir.join("z0.txt");
    fs::write(&path, z0_string(&record.z0)).map_err(|e| Error::io(&path, e))
}

pub fn manifest_json(manifest: &DatasetManifest) -> String {
    serde_json::to_string_pretty(manifest).expect("manifest serializes") + "\n"
}

/// Generates the corpus and writes it under `out_dir`.
pub fn build_dataset(
    corpus: &CorpusSpec,
    arch: &ArchSpec,
    perturb_spec: &PerturbSpec,
    out_dir: &Path,
) -> Result<Dataset> {
    let dataset = generate_dataset(corpus, arch, perturb_spec)?;
    fs::create_dir_all(out_dir.join("records")).map_err(|e| Error::io(out_dir, e))?;
    exec::map_indexed(&dataset.records, |_, r| write_record(out_dir, r)).into_iter().collect::<Result<Vec<_>>>()?;
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, manifest_json(&dataset.manifest)).map_err(|e| Error::io(&path, e))?;
    Ok(dataset)
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.to_string()))
}

pub fn read_record(root: &Path, entry: &RecordEntry) -> Result<DatasetRecord> {
    let dir = record_dir(root, &entry.id);
    let (gt, _) = read_jaw(&dir.join("gt"))?;
    let (input, _) = read_jaw(&dir.join("input"))?;
    let path = dir.join("z0.txt");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let labels = gt.labels();
    let mut per_tooth = BTreeMap::new();
    let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if rows.len() != labels.len() {
        return Err(Error::parse(&path, format!("expected {} rows, found {}", labels.len(), rows.len())));
    }
    for (label, row) in labels.iter().zip(rows) {
        let vals: Vec<f64> = row
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(&path, e.to_string()))?;
        let z: [f64; 6] = vals.try_into().map_err(|_| Error::parse(&path, "each row needs 6 values"))?;
        per_tooth.insert(*label, z);
    }
    Ok(DatasetRecord { id: entry.id.clone(), patient: entry.patient, gt, input, z0: TransformParams { per_tooth } })
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let manifest = read_manifest(root)?;
    let records =
        exec::map_indexed(&manifest.records, |_, e| read_record(root, e)).into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Dataset { manifest, records })
}
