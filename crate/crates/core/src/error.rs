use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("input too short: length {len} < required {needed}")]
    InputTooShort { len: usize, needed: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("graph already consumed by a previous backward pass")]
    GraphConsumed,

    #[error("alignment infeasible: {frames} frames cannot emit a target needing {needed}")]
    AlignmentInfeasible { frames: usize, needed: usize },

    #[error("oracle instance too large: {paths} paths exceeds limit {limit}")]
    OracleTooLarge { paths: f64, limit: f64 },

    #[error("utterance has a single frame; no negatives available")]
    NoNegatives,

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint config does not match the current model config")]
    ConfigMismatch,

    #[error("error rate undefined for an empty reference")]
    UndefinedRate,

    #[error("training diverged at update {step} (non-finite loss)")]
    Diverged { step: u64 },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("missing path: {}", .0.display())]
    MissingPath(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
