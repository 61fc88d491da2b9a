use thiserror::Error;

/// Errors raised by the solver, the learned operator and their file formats.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violated a size, shape or range precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Two objects that must live on the same grid do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A brute-force routine was asked to run above its size guard.
    #[error("problem too large for the direct evaluator: {size} > {limit}")]
    TooLarge { size: usize, limit: usize },

    /// The nested quadrature oracle did not converge within its node budget.
    #[error("oracle did not converge (estimate {estimate_re} + {estimate_im}i, last change {change:e})")]
    OracleFailure { estimate_re: f64, estimate_im: f64, change: f64 },

    /// A state, gradient or loss became NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Training loss exceeded the divergence threshold.
    #[error("training diverged at epoch {epoch} (loss {loss:e})")]
    Diverged { epoch: usize, loss: f64 },

    /// The sample was rejected (non-positive mass, zero target, ...).
    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
