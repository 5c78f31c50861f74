use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid dimensions: r = {r}, d = {d} (need 1 <= r <= d)")]
    InvalidDimensions { r: usize, d: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("alignment infeasible: minimum SNR {kappa_min} is below floor {floor}")]
    AlignmentInfeasible { kappa_min: f64, floor: f64 },

    #[error("power budget exceeded: gamma + zeta = {total} > 1")]
    PowerBudget { total: f64 },

    #[error("at least one round is required")]
    EmptyRounds,

    #[error("too few trials: {got} < {min}")]
    TooFewTrials { got: usize, min: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}

pub(crate) fn ensure_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
