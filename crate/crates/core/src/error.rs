use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid feature matrix: {0}")]
    InvalidFeatures(String),
    #[error("invalid labels: {0}")]
    InvalidLabels(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("need at least 2 samples, got {0}")]
    InsufficientSamples(usize),
    #[error("covariance is numerically singular (min eigenvalue {min_eig:e}, max {max_eig:e}); pass a positive ridge")]
    SingularCovariance { min_eig: f64, max_eig: f64 },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("class {class} has no samples; every class needs at least one labeled shot (k-shot data means k samples per class)")]
    EmptyClass { class: usize },
    #[error("{what} is not zero-mean (max abs mean {max_abs_mean:e})")]
    NotZeroMean {
        what: &'static str,
        max_abs_mean: f64,
    },
    #[error("class priors differ between sources (max deviation {0:e})")]
    PriorMismatch(f64),
    #[error("objective became non-finite at iteration {0}")]
    NonFiniteObjective(usize),
    #[error("grid search supports at most 3 sources, got {0}")]
    TooManySources(usize),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("class {0} has zero marginal probability")]
    ZeroMarginal(usize),
    #[error("{path}: bad magic bytes")]
    BadMagic { path: PathBuf },
    #[error("{path}: file truncated (expected {expected} bytes, found {found})")]
    TruncatedFile {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("{path}: {trailing} unexpected trailing bytes")]
    TrailingData { path: PathBuf, trailing: u64 },
    #[error("matrix of {rows}x{cols} exceeds 2^31 entries")]
    OversizeMatrix { rows: u64, cols: u64 },
    #[error("label {label} at position {index} is out of range for {n_classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: u64,
        n_classes: u64,
    },
    #[error("unsupported model format_version {found} (expected {expected})")]
    SchemaVersionMismatch { found: u64, expected: u64 },
    #[error("malformed model document: {0}")]
    MalformedDocument(String),
    #[error("{path}: row {row} has {found} cells, expected {expected}")]
    RaggedRows {
        path: PathBuf,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}: row {row}, column {col}: cannot parse {cell:?} as a number")]
    NonNumericCell {
        path: PathBuf,
        row: usize,
        col: usize,
        cell: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimMismatch(msg.into())
    }
}
