use thiserror::Error;

/// Errors produced by the analysis pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient data for series '{label}': {reason}")]
    InsufficientData { label: String, reason: String },

    #[error("degenerate series '{0}': zero variance")]
    DegenerateSeries(String),

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("ill-conditioned spectral matrix at frequency {omega:.6} rad/sample (grid index {index})")]
    IllConditioned { index: usize, omega: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("combinatorial limit exceeded: {count} supports (limit {limit})")]
    CombinatorialLimit { count: u128, limit: u128 },

    #[error("unknown node {0}")]
    UnknownNode(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("i/o failure: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
