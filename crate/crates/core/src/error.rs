use std::path::PathBuf;

use crate::geometry::ToothLabel;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid FDI tooth code {0}")]
    InvalidLabel(u32),

    #[error("degenerate tooth {label}: {reason}")]
    DegenerateTooth { label: ToothLabel, reason: String },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("label sets differ: missing in prediction {missing_in_pred:?}, missing in ground truth {missing_in_gt:?}")]
    LabelMismatch { missing_in_pred: Vec<ToothLabel>, missing_in_gt: Vec<ToothLabel> },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("timestep {t} outside [0, {max}]")]
    Timestep { t: usize, max: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: parse error: {msg}")]
    Parse { path: PathBuf, msg: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), msg: msg.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
