use thiserror::Error;

use crate::quadrature::QuadError;
use crate::scalar::Real;

/// A parameter or argument outside its admissible domain.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("parameters must be finite (alpha = {alpha}, gamma = {gamma})")]
    NonFinite { alpha: f64, gamma: f64 },
    #[error("gamma = {gamma} violates gamma >= 0 (short by {by:e})")]
    GammaNegative { gamma: f64, by: f64 },
    #[error("gamma = {gamma} violates gamma < 1 (exceeds by {by:e})")]
    GammaTooLarge { gamma: f64, by: f64 },
    #[error("alpha = {alpha} violates alpha > gamma/2 - 1/2 = {bound} (short by {by:e})")]
    AlphaTooSmall { alpha: f64, bound: f64, by: f64 },
    #[error("alpha = {alpha} violates alpha < gamma/2 + 1/2 = {bound} (exceeds by {by:e})")]
    AlphaTooLarge { alpha: f64, bound: f64, by: f64 },
    #[error("{what}: {detail}")]
    Argument { what: &'static str, detail: String },
}

impl DomainError {
    pub(crate) fn arg(what: &'static str, detail: impl Into<String>) -> Self {
        DomainError::Argument {
            what,
            detail: detail.into(),
        }
    }
}

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("regime error: {0}")]
    Regime(String),
    #[error("quadrature did not converge in {module}: value {value:e}, error estimate {abs_error:e} after {evaluations} evaluations")]
    NonConvergence {
        module: &'static str,
        value: f64,
        abs_error: f64,
        evaluations: usize,
    },
    #[error("invalid integral specification: {0}")]
    InvalidSpec(String),
    #[error("matrix not positive semidefinite in {module}: {detail}")]
    NotPsd {
        module: &'static str,
        detail: String,
    },
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Name of the failing subsystem for numerical failures.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. } | Error::NotPsd { .. } | Error::InvalidSpec(_)
        )
    }
}

impl<T: Real> From<QuadError<T>> for Error {
    fn from(e: QuadError<T>) -> Self {
        match e {
            QuadError::NonConvergence(r) => Error::NonConvergence {
                module: "quadrature",
                value: r.value.f(),
                abs_error: r.abs_error_estimate.f(),
                evaluations: r.evaluations,
            },
            QuadError::InvalidSpec(s) => Error::InvalidSpec(s),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
