use std::path::PathBuf;

use thiserror::Error;

use crate::rules::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("graph has no nodes")]
    EmptyGraph,

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("self-loop on node {0}")]
    SelfLoop(usize),

    #[error("rule violation: {0}")]
    RuleViolation(Violation),

    #[error("no legal action: every position is masked")]
    NoLegalAction,

    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    #[error("cannot read {}: {source}", path.display())]
    Load {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {msg}")]
    Format { file: String, line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("weights file: {0}")]
    Weights(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
