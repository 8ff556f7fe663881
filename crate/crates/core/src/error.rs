use thiserror::Error;

/// Errors raised by the Galerkin LLG toolkit.
#[derive(Debug, Error)]
pub enum LlgError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("grid with {points} points is too coarse for truncation order {order} (need at least {required})")]
    GridTooCoarse {
        points: usize,
        order: usize,
        required: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("time {t} is outside the schedule support [0, {horizon}]")]
    OutsideSchedule { t: f64, horizon: f64 },

    #[error("non-finite state encountered at t = {t}")]
    NonFinite { t: f64 },

    #[error("blow-up at t = {t}: weighted norm {norm} exceeds {limit}")]
    BlowUp { t: f64, norm: f64, limit: f64 },

    #[error("time grid mismatch: {0}")]
    GridMismatch(String),

    #[error("CFL violation: dt = {dt} exceeds the explicit limit {limit}")]
    Cfl { dt: f64, limit: f64 },

    #[error("endpoints are not norm-compatible (gap {gap:.3e})")]
    NormIncompatible { gap: f64 },

    #[error("endpoints differ in a conserved quadratic form of the system (gap {gap:.3e})")]
    InvariantIncompatible { gap: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, LlgError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> LlgError {
    LlgError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
