use thiserror::Error;

/// Errors raised by the inference engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PviError {
    /// A caller broke a documented precondition (dimension mismatch, non-finite input).
    #[error("contract violation: {0}")]
    Contract(String),

    /// An invalid or incompatible configuration, detected before any work is done.
    #[error("configuration error: {0}")]
    Config(String),

    /// The likelihood bound used by the rejection estimator was exceeded.
    #[error("likelihood bound violated at datum {datum}: p = {likelihood:e} > C = {bound:e}")]
    BoundViolated {
        datum: usize,
        likelihood: f64,
        bound: f64,
    },

    /// A numerical failure during evaluation (non-finite objective, etc.).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, PviError>;

impl From<std::io::Error> for PviError {
    fn from(e: std::io::Error) -> Self {
        PviError::Io(e.to_string())
    }
}

impl From<csv::Error> for PviError {
    fn from(e: csv::Error) -> Self {
        PviError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for PviError {
    fn from(e: serde_json::Error) -> Self {
        PviError::Data(e.to_string())
    }
}

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(PviError::Contract(msg.into()))
}

pub(crate) fn check_dim(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return contract(format!("{what}: dimension {got}, expected {expected}"));
    }
    Ok(())
}
