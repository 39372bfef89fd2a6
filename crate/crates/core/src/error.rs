use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("conflict needs at least two agents, got {0}")]
    TooFewAgents(usize),

    #[error("shape mismatch in {op}: expected {expected:?}, got {actual:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("backward called on an empty tape")]
    EmptyTape,

    #[error("loss must be a scalar, got {0} values")]
    NonScalarLoss(usize),

    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),

    #[error("point is not on the probability simplex")]
    OffSimplex,

    #[error("episode {0} has no ground truth")]
    MissingGroundTruth(String),

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("calibration set contains only one class")]
    SingleClass,

    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),

    #[error("unknown parameter {0}")]
    UnknownParam(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("schema mismatch in {path}: {msg}")]
    Schema { path: PathBuf, msg: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
