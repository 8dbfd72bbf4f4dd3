use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    /// A retraction left the manifold: the numerical rank of the new point fell below `rank`.
    #[error("retraction dropped rank below {rank} (sigma_min / sigma_max = {ratio:e})")]
    RankDrop { rank: usize, ratio: f64 },

    #[error("line search failed after {backtracks} backtracks")]
    LineSearchFail { backtracks: usize },

    #[error("solver diverged: {0}")]
    Divergence(String),

    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("model format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupt model: {0}")]
    CorruptModel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
