use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the fitting pipeline.
#[derive(Debug, Error)]
pub enum DmdError {
    #[error("numerical failure in {what} on a {rows}x{cols} matrix")]
    NumericalFailure {
        what: &'static str,
        rows: usize,
        cols: usize,
    },

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("all singular values of the mode matrix fall below the pseudoinverse cutoff")]
    DegenerateModes,

    #[error("data is numerically zero: every singular value is below the truncation cutoff")]
    DegenerateData,

    #[error("need at least 2 snapshots, got {n}")]
    InsufficientSnapshots { n: usize },

    #[error("delay depth q = {q} is out of range for {n} snapshots (need 1 <= q <= n - 1)")]
    InvalidDelay { q: usize, n: usize },

    #[error("training length {n_train} is out of range for {n} snapshots (need 2 <= n_train < n)")]
    InvalidSplit { n_train: usize, n: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error(
        "time step {dt} s undersamples the highest frequency {f_max} Hz; \
         sampling must be at least twice the maximum frequency (dt <= {limit})"
    )]
    SamplingRate { dt: f64, f_max: f64, limit: f64 },

    #[error("measurement count {a} is out of range for state dimension {dim}")]
    InvalidCount { a: usize, dim: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("Arnoldi start vector is zero")]
    InvalidStartVector,

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error(
        "zero initial condition: the first snapshot is identically zero, so the \
         amplitudes b = pinv(Phi) x1 would all vanish; start the fit at a later sample"
    )]
    ZeroInitialCondition,

    #[error(
        "insufficient measurements: truncation rank {rank} exceeds the {rows} sketch rows \
         (a = {a}, q = {q}); the projected fit needs aq >= r"
    )]
    InsufficientMeasurements {
        rank: usize,
        rows: usize,
        a: usize,
        q: usize,
    },

    #[error("variant `{variant}` failed: {source}")]
    VariantFailed {
        variant: String,
        #[source]
        source: Box<DmdError>,
    },

    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("{path}:{line}: field `{field}`: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        field: String,
        message: String,
    },

    #[error("inconsistent snapshot file: {0}")]
    Consistency(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl DmdError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DmdError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        DmdError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = DmdError> = std::result::Result<T, E>;
