use std::path::PathBuf;

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, InfoFlowError>;

/// Coarse classification of errors, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad arguments or an invalid request.
    Usage,
    /// Malformed, missing or insufficient input data.
    Data,
    /// A numerical failure (singular covariance, unstable system, ...).
    Numerical,
}

#[derive(Debug, Error)]
pub enum InfoFlowError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("non-finite value at row {row}, column {column} (missing values are not imputed)")]
    NonFinite { row: usize, column: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid stride k = {k} for a series of length {n}")]
    InvalidStride { k: usize, n: usize },

    #[error("invalid series pair: {0}")]
    InvalidPair(String),

    #[error("index {index} out of range for {d} series")]
    IndexOutOfRange { index: usize, d: usize },

    #[error("unknown series label '{0}'")]
    UnknownLabel(String),

    #[error("singular covariance matrix (det = {det:e}, threshold = {threshold:e})")]
    SingularCovariance { det: f64, threshold: f64 },

    #[error("degenerate component {0}: zero variance")]
    DegenerateComponent(usize),

    #[error("degenerate normalizer: flow, self-influence and noise terms are all zero")]
    DegenerateNormalizer,

    #[error("no stationary distribution: drift matrix is not Hurwitz (max real eigenvalue part {max_real:e})")]
    NotHurwitz { max_real: f64 },

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("simulation became unstable at step {step} (|X| > 1e12); try a smaller dt")]
    Unstable { step: usize },

    #[error("unknown benchmark '{0}' (expected one of one_way_2d, chain_3, confounder_3, independent_d, henon)")]
    UnknownBenchmark(String),

    #[error("surrogate test needs at least 19 surrogates, got {0}")]
    SurrogateResolution(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl InfoFlowError {
    pub fn kind(&self) -> ErrorKind {
        use InfoFlowError::*;
        match self {
            Io { .. } | Parse { .. } | Format(_) | NonFinite { .. } | InsufficientData(_) | Json(_) => ErrorKind::Data,
            SingularCovariance { .. }
            | DegenerateComponent(_)
            | DegenerateNormalizer
            | NotHurwitz { .. }
            | Unstable { .. } => ErrorKind::Numerical,
            InvalidStride { .. }
            | InvalidPair(_)
            | IndexOutOfRange { .. }
            | UnknownLabel(_)
            | InvalidTransform(_)
            | DimensionMismatch(_)
            | UnknownBenchmark(_)
            | SurrogateResolution(_)
            | InvalidArgument(_) => ErrorKind::Usage,
        }
    }
}
