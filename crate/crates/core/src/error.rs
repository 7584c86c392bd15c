use thiserror::Error;

/// Errors raised by the simulation, filtering, search and training layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular stiffness parameterization: 1 - 2 nu^2 nu_perp = {0:e}")]
    SingularStiffness(f64),

    #[error("return mapping did not converge after {iterations} iterations (|g| = {residual:e})")]
    ReturnMapping { iterations: usize, residual: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index-1 assumption violated: the algebraic Jacobian with respect to stress is singular")]
    IndexViolation,

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("filter diverged at step {step}: {reason}")]
    FilterDivergence { step: usize, reason: String },

    #[error("search: {0}")]
    Search(String),

    #[error("training: {0}")]
    Training(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("{failed} of {total} episodes failed, exceeding the failure budget; last error: {last}")]
    FailureBudget { failed: usize, total: usize, last: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
