//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by grid construction, measure manipulation, the solver and
/// the recovery pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A grid could not be built from the requested parameters.
    #[error("invalid grid: {0}")]
    Grid(String),

    /// Two tables or sequences that must share a shape do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The requested sampling cannot represent the highest frequency.
    #[error("aliasing: {0}")]
    Aliasing(String),

    /// A measure table violates the nonnegativity or mass constraint.
    #[error("infeasible measure: {0}")]
    Infeasible(String),

    /// A parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// No parameter in the admissible family satisfies the scheduling rule.
    #[error("no admissible schedule: {0}")]
    Schedule(String),

    /// A numerical invariant broke down (for example a nonpositive amplitude).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
