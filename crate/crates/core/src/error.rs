use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("gravitational singularity: {0}")]
    Singularity(String),

    #[error("propagation failed at RK4 stage {stage}: non-finite derivative")]
    Propagation { stage: usize },

    #[error("invalid orbit: {0}")]
    InvalidOrbit(String),

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("root solver failed: {0}")]
    Solver(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("rollout diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("training produced a non-finite loss at epoch {epoch}, batch {batch} ({terms})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        terms: String,
    },

    #[error("parse error in {file}, record {record}: {message}")]
    Parse {
        file: String,
        record: u64,
        message: String,
    },

    #[error("corrupt file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("unit-system mismatch: {0}")]
    Units(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
