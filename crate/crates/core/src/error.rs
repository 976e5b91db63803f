use thiserror::Error;

/// Errors produced by the solvers and generators in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The input does not determine a unique rotation (too few matches,
    /// parallel points, rank-deficient cross-covariance).
    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    /// An internal invariant was broken. Seeing this is a bug.
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
