use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SrfError>;

#[derive(Debug, Error)]
pub enum SrfError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(
        "invalid counts at pair ({i}, {j}): retained-together count {c} exceeds exposure count {m}"
    )]
    InvalidCounts { i: usize, j: usize, c: u64, m: u64 },

    #[error("association graph is empty after preprocessing")]
    EmptyGraph,

    #[error("negative feature value {value} at row {row}, column {col}; use the RBF kernel for signed features")]
    NegativeFeature { row: usize, col: usize, value: f64 },

    #[error("degenerate RBF bandwidth: median pairwise distance is zero")]
    DegenerateBandwidth,

    #[error("matrix is not square: {rows} x {cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("rank {rank} must be at least 1 and smaller than the item count {n}")]
    InvalidRank { rank: usize, n: usize },

    #[error("observation mask has no observed off-diagonal entries")]
    EmptyMask,

    #[error("anchor block is singular (reciprocal condition {rcond:e})")]
    SingularAnchorBlock { rcond: f64 },

    #[error("fold {fold} has no held-out pairs; the observation mask is too sparse")]
    EmptyFold { fold: usize },

    #[error("noise scale search failed to bracket the target SNR {snr}")]
    NoiseBracket { snr: f64 },

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SrfError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SrfError::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SrfError::Io {
            path: path.into(),
            source,
        }
    }
}
