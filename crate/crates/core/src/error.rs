use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("cell imbalance: {0}")]
    Imbalance(String),
}

impl Error {
    /// Stable machine-readable tag, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse(_) => "ParseError",
            Error::Validation(_) => "ValidationError",
            Error::Dimension(_) => "DimensionError",
            Error::Capacity(_) => "CapacityError",
            Error::NonFinite(_) => "NonFiniteError",
            Error::Infeasible(_) => "InfeasibleError",
            Error::Imbalance(_) => "ImbalanceError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
