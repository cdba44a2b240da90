use thiserror::Error;

/// Failures raised by the solvers and their inputs.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The mean state reached the threshold, so the radial representation breaks down.
    #[error("mean state {value} at node {node} is not below the threshold {alpha}")]
    StateConstraint { node: usize, value: f64, alpha: f64 },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("solver did not converge: {0}")]
    NonConvergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
