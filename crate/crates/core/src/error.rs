use thiserror::Error;

use crate::problem::PrimalDualState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// `max_j |X_j^T theta| - 1` exceeded the feasibility tolerance.
    #[error("dual point is infeasible (max violation {violation:.3e})")]
    Infeasible { violation: f64 },

    #[error("policy error: {0}")]
    Policy(String),

    /// The optimization error is too large for the size-control radicands to be positive.
    #[error("active-set size control infeasible for target size {target}: tighten the inner solve")]
    SizeControlInfeasible { target: usize },

    #[error("iteration budget exhausted after {epochs} epochs (gap {gap:.3e})")]
    Budget {
        epochs: usize,
        gap: f64,
        best: Box<PrimalDualState>,
    },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
