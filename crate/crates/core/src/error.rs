use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report. `class()` gives the stable
/// identifier printed by the CLI and mapped to FFI status codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed header: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("{path}: tensors `{first}` and `{second}` have overlapping data regions")]
    OverlappingRegions {
        path: PathBuf,
        first: String,
        second: String,
    },

    #[error("{path}: data section holds {actual} bytes but manifest needs {expected}")]
    TruncatedFile {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("{path}: duplicate tensor name `{name}`")]
    DuplicateTensorName { path: PathBuf, name: String },

    #[error("{path}: tensor `{name}` has unsupported dtype {dtype}")]
    UnsupportedDType {
        path: PathBuf,
        name: String,
        dtype: String,
    },

    #[error("unknown tensor `{0}`")]
    UnknownTensor(String),

    #[error("tensor `{name}`: expected {expected} elements, got {actual}")]
    ShapeMismatch {
        name: String,
        expected: usize,
        actual: usize,
    },

    #[error("checkpoints are not homologous: {0}")]
    NotHomologous(String),

    #[error("tensor `{name}` has conflicting shapes {a:?} and {b:?}")]
    ShapeConflict {
        name: String,
        a: Vec<usize>,
        b: Vec<usize>,
    },

    #[error("no tensor is present in every term")]
    EmptyIntersection,

    #[error("coefficient {0} is not finite in working precision")]
    NonFiniteCoefficient(f64),

    #[error("invalid combine spec: {0}")]
    InvalidSpec(String),

    #[error("the two deltas share no tensors")]
    NoSharedTensors,

    #[error("histogram input holds no defined values")]
    EmptyInput,

    #[error("score table: {0}")]
    ScoreTable(String),

    #[error("no (benchmark, metric) pair has all required scores")]
    NoCompleteTriples,

    #[error("degenerate regression input: {0}")]
    DegenerateInput(String),

    #[error("alpha {0} appears more than once")]
    DuplicateAlpha(f64),

    #[error("alpha {0} is not finite")]
    NonFiniteAlpha(f64),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::MalformedHeader {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Stable, machine-parseable error class name.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Io { .. } => "IoFailure",
            Error::MalformedHeader { .. } => "MalformedHeader",
            Error::OverlappingRegions { .. } => "OverlappingRegions",
            Error::TruncatedFile { .. } => "TruncatedFile",
            Error::DuplicateTensorName { .. } => "DuplicateTensorName",
            Error::UnsupportedDType { .. } => "UnsupportedDType",
            Error::UnknownTensor(_) => "UnknownTensor",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::NotHomologous(_) => "NotHomologous",
            Error::ShapeConflict { .. } => "ShapeConflict",
            Error::EmptyIntersection => "EmptyIntersection",
            Error::NonFiniteCoefficient(_) => "NonFiniteCoefficient",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::NoSharedTensors => "NoSharedTensors",
            Error::EmptyInput => "EmptyInput",
            Error::ScoreTable(_) => "InvalidScoreTable",
            Error::NoCompleteTriples => "NoCompleteTriples",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::DuplicateAlpha(_) => "DuplicateAlpha",
            Error::NonFiniteAlpha(_) => "NonFiniteAlpha",
            Error::Json(_) => "InvalidJson",
        }
    }
}
