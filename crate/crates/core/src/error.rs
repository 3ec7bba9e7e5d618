use thiserror::Error;

/// Errors raised by the model, solvers and experiments.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GkError {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative method failed to converge or produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A response function failed one of its structural checks.
    #[error("invariant violation at x = {x}: {what}")]
    InvariantViolation { what: String, x: f64 },

    /// The argument of G left the range of F during a run.
    #[error("admissibility violated at t = {last_valid_time}: {detail}")]
    Admissibility { last_valid_time: f64, detail: String },

    /// A sufficient framework required by the operation does not hold.
    #[error("precondition failed: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, GkError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(GkError::Domain(msg.into()))
}
