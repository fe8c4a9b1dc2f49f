//! Generalized fractional Brownian motion: exact covariance structure,
//! Gaussian path simulation and empirical path statistics.

pub mod covariance;
pub mod error;
pub mod lamperti;
pub mod params;
pub mod pathstats;
pub mod quadrature;
pub mod regression;
pub mod scalar;
pub mod simulate;
pub mod smallball;
pub mod tangent;
pub mod verify;

pub use error::{DomainError, Error, Result};
pub use params::{GfbmParams, Regime, RegimeKind};
pub use scalar::Real;

/// Double-precision parameters.
pub type Params = GfbmParams<f64>;
/// Single-precision parameters.
pub type Params32 = GfbmParams<f32>;
/// Double-precision covariance model.
pub type Model = covariance::CovarianceModel<f64>;
/// Single-precision covariance model.
pub type Model32 = covariance::CovarianceModel<f32>;
/// Double-precision covariance value.
pub type Cov = covariance::CovEvaluation<f64>;
/// Double-precision constants.
pub type Constants = covariance::ModelConstants<f64>;
