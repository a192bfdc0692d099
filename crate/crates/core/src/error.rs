use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An iterative decomposition hit its sweep cap.
    #[error("{op} failed to converge on a {rows}x{cols} matrix")]
    NumericalFailure {
        op: &'static str,
        rows: usize,
        cols: usize,
    },

    /// Caller violated a documented precondition (shape, symmetry, orthonormality, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input is well-formed but numerically degenerate (zero vector, zero variance).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// An optimization solver exhausted its iteration budget.
    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }
}
