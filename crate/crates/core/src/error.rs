use thiserror::Error;

use crate::bounds::Infeasibility;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("search direction is the zero vector")]
    DegenerateDirection,

    #[error("initial mean coincides with the optimum")]
    DegenerateStart,

    #[error("state mean coincides with the optimum")]
    DegenerateState,

    #[error("non-finite objective value: {0}")]
    NumericalFailure(String),

    #[error("argument outside domain: {0}")]
    DomainError(String),

    #[error("infeasible bound: {0}")]
    InfeasibleBound(Infeasibility),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("config error: {0}")]
    ConfigError(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
