use std::path::{Path, PathBuf};

use archdiff::diffusion::{DenoiserConfig, ModelConfig, TrainConfig};
use archdiff::encoders::{EncoderConfig, MaeConfig, SaConfig};
use archdiff::metrics::EvalOptions;
use archdiff::synth::{ArchSpec, CorpusSpec, PerturbSpec};
use archdiff::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Dataset directory. Empty means `$ARCHDIFF_CACHE/<hash>` when the
    /// variable is set, otherwise `archdiff-data`.
    pub data: String,
    /// Output directory of the run (checkpoints, reports).
    pub run: String,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { data: String::new(), run: "runs/default".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainSection {
    pub enabled: bool,
    /// Teeth used for pretraining (`0` uses every training tooth).
    pub max_teeth: usize,
    #[serde(flatten)]
    pub mae: MaeConfig,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection { enabled: true, max_teeth: 0, mae: MaeConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub curve_samples: usize,
    /// Report thresholded CSA instead of the mean cosine similarity.
    pub csa_threshold: Option<f64>,
    /// Upper bin edges (mm) of the cumulative distance table.
    pub bin_edges: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { curve_samples: 100, csa_threshold: None, bin_edges: (1..=20).map(|i| i as f64 * 0.25).collect() }
    }
}

impl EvalSection {
    pub fn options(&self) -> EvalOptions {
        EvalOptions { curve_samples: self.curve_samples, csa_threshold: self.csa_threshold }
    }
}

/// Everything a run needs; serializable so a run is reproducible from its
/// config file and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub corpus: CorpusSpec,
    pub arch: ArchSpec,
    pub perturb: PerturbSpec,
    pub model: ModelConfig,
    pub pretrain: PretrainSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// Single-CPU profile: 500 records, 200 epochs, narrow networks.
    pub fn desk() -> Self {
        RunConfig {
            seed: 0,
            paths: Paths::default(),
            corpus: CorpusSpec { n_patients: 50, test_fraction: 0.1, seed: 0 },
            arch: ArchSpec::default(),
            perturb: PerturbSpec::default(),
            model: ModelConfig::default(),
            pretrain: PretrainSection::default(),
            train: TrainConfig::desk(),
            eval: EvalSection::default(),
        }
    }

    /// Hyperparameters at the published scale (needs far more compute).
    pub fn paper() -> Self {
        let mut c = Self::desk();
        c.model.encoder = EncoderConfig {
            d_local: 256,
            d_global: 256,
            local_depth: 12,
            prop_depth: 2,
            heads: 8,
            points_per_tooth: 512,
            sa1: SaConfig { npoint: 1024, radius: 4.0, k: 32 },
            sa2: SaConfig { npoint: 256, radius: 12.0, k: 32 },
            ..EncoderConfig::default()
        };
        c.model.denoiser = DenoiserConfig { dim: 256, blocks: 12, heads: 8, ..DenoiserConfig::default() };
        c.model.regression_hidden = 256;
        c.train = TrainConfig::default();
        c.train.loss_vertices = 0;
        c.corpus.n_patients = 100;
        c
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!("unknown profile {other:?} (expected desk or paper)"))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Parses a (possibly partial) config, rejecting keys that no field
    /// reads.
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        let given: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
        let known = toml::Table::try_from(&cfg).map_err(|e| e.to_string())?;
        match unknown_key(&given, &known, "") {
            Some(k) => Err(format!("unknown key {k:?}")),
            None => Ok(cfg),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.perturb.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.pretrain.enabled {
            self.pretrain.mae.validate()?;
        }
        if self.corpus.n_patients == 0 {
            return Err(Error::Config("corpus needs at least one patient".into()));
        }
        Ok(())
    }

    /// Propagates the run seed into every component seed.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.model.init_seed = seed;
        self.train.seed = seed;
        self.pretrain.mae.seed = seed;
    }

    pub fn data_dir(&self) -> PathBuf {
        if !self.paths.data.is_empty() {
            return PathBuf::from(&self.paths.data);
        }
        match std::env::var_os("ARCHDIFF_CACHE") {
            Some(root) => PathBuf::from(root).join(format!("dataset-{}", &self.data_hash()[..12])),
            None => PathBuf::from("archdiff-data"),
        }
    }

    /// Hash of the settings that determine the dataset contents.
    pub fn data_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let key = serde_json::to_string(&(&self.corpus, &self.arch, &self.perturb)).expect("serializes");
        hex::encode(Sha256::digest(key.as_bytes()))
    }

    pub fn run_dir(&self) -> PathBuf {
        PathBuf::from(&self.paths.run)
    }
}

fn unknown_key(given: &toml::Table, known: &toml::Table, prefix: &str) -> Option<String> {
    for (k, v) in given {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (v, known.get(k)) {
            (_, None) => {
                // optional fields serialize to nothing when unset
                if !OPTIONAL_KEYS.contains(&path.as_str()) {
                    return Some(path);
                }
            }
            (toml::Value::Table(g), Some(toml::Value::Table(kn))) => {
                if let Some(p) = unknown_key(g, kn, &path) {
                    return Some(p);
                }
            }
            _ => {}
        }
    }
    None
}

const OPTIONAL_KEYS: [&str; 1] = ["eval.csa_threshold"];
