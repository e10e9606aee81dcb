use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("partition has an empty block (label {label})")]
    EmptyBlock { label: usize },
    #[error("partition labels are not contiguous: label {missing} is unused but {max} is present")]
    NonContiguousLabels { missing: usize, max: usize },
    #[error("size mismatch: expected {expected}, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("centroid of an empty set is undefined")]
    EmptySet,
    #[error("geometric median did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("all covariate rows are identical; lambda must be supplied explicitly")]
    DegenerateCovariates,
    #[error("quadrature failed: {0}")]
    QuadratureFailure(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("invalid configuration for `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("non-binary value {value} at row {row}, column {column}")]
    NonBinaryValue {
        row: usize,
        column: String,
        value: String,
    },
    #[error("subject {subject}: occasions are not contiguous from 1")]
    NonMonotoneOccasions { subject: String },
    #[error("subject {subject}: censoring time {tau} does not exceed the last event time {last_event}")]
    CensorBeforeLastEvent {
        subject: String,
        tau: f64,
        last_event: f64,
    },
    #[error("trace is empty")]
    EmptyTrace,
    #[error("invalid simulation spec: {0}")]
    Spec(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub fn config(key: &str, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.to_string(),
            message: message.into(),
        }
    }

    /// True for failures caused by the numerics of a sampler rather than by user input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. } | Error::QuadratureFailure(_) | Error::NumericalFailure(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
