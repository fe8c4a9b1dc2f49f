//! Parameter domain and regularity regimes.
//!
//! The process is indexed by a kernel exponent `alpha` and a weight exponent
//! `gamma`. Admissible pairs satisfy `gamma` in `[0, 1)` and
//! `alpha` in `(gamma/2 - 1/2, gamma/2 + 1/2)`, both intervals open where stated.

use serde::{Deserialize, Serialize};

use crate::error::DomainError;
use crate::scalar::Real;

/// Distance from 1/2 below which a near-critical warning is issued.
pub const NEAR_CRITICAL_BAND: f64 = 1e-6;

/// Validated parameter pair with its derived indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GfbmParams<T = f64> {
    pub alpha: T,
    pub gamma: T,
    /// Self-similarity index `alpha - gamma/2 + 1/2`.
    pub hurst: T,
    /// Index of the derivative process, `alpha - gamma/2 - 1/2`.
    pub hurst_deriv: T,
}

/// Regularity class of the sample paths away from the origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegimeKind {
    Rough,
    Critical,
    Smooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regime<T = f64> {
    pub kind: RegimeKind,
    /// `alpha + 1/2` when rough, `alpha - 1/2` (for the derivative) when smooth, 1 when critical.
    pub local_exponent: T,
    pub log_correction: bool,
}

impl<T: Real> GfbmParams<T> {
    /// Checks the open parameter domain and fills in the derived indices.
    pub fn validate(alpha: T, gamma: T) -> Result<Self, DomainError> {
        let (a, g) = (alpha.f(), gamma.f());
        if !alpha.is_finite() || !gamma.is_finite() {
            return Err(DomainError::NonFinite { alpha: a, gamma: g });
        }
        let zero = T::zero();
        let one = T::one();
        let half = T::c(0.5);
        if gamma < zero {
            return Err(DomainError::GammaNegative { gamma: g, by: -g });
        }
        if gamma >= one {
            return Err(DomainError::GammaTooLarge {
                gamma: g,
                by: g - 1.0,
            });
        }
        let lo = gamma * half - half;
        let hi = gamma * half + half;
        if alpha <= lo {
            return Err(DomainError::AlphaTooSmall {
                alpha: a,
                bound: lo.f(),
                by: (lo - alpha).f(),
            });
        }
        if alpha >= hi {
            return Err(DomainError::AlphaTooLarge {
                alpha: a,
                bound: hi.f(),
                by: (alpha - hi).f(),
            });
        }
        Ok(Self {
            alpha,
            gamma,
            hurst: alpha - gamma * half + half,
            hurst_deriv: alpha - gamma * half - half,
        })
    }

    pub fn classify(&self) -> Regime<T> {
        let half = T::c(0.5);
        if self.alpha < half {
            Regime {
                kind: RegimeKind::Rough,
                local_exponent: self.alpha + half,
                log_correction: false,
            }
        } else if self.alpha == half {
            Regime {
                kind: RegimeKind::Critical,
                local_exponent: T::one(),
                log_correction: true,
            }
        } else {
            Regime {
                kind: RegimeKind::Smooth,
                local_exponent: self.alpha - half,
                log_correction: false,
            }
        }
    }

    /// Message when `alpha` lies within [`NEAR_CRITICAL_BAND`] of 1/2 without being equal.
    pub fn near_critical_warning(&self) -> Option<String> {
        let d = (self.alpha.f() - 0.5).abs();
        (d > 0.0 && d < NEAR_CRITICAL_BAND).then(|| {
            format!(
                "alpha = {} is within {:e} of 1/2; regime is {:?} but numerics near the critical point degrade",
                self.alpha,
                d,
                self.classify().kind
            )
        })
    }

    /// Local Hölder index `alpha + 1/2`.
    pub fn local_index(&self) -> T {
        self.alpha + T::c(0.5)
    }

    pub fn cast<U: Real>(&self) -> GfbmParams<U> {
        GfbmParams {
            alpha: U::c(self.alpha.f()),
            gamma: U::c(self.gamma.f()),
            hurst: U::c(self.hurst.f()),
            hurst_deriv: U::c(self.hurst_deriv.f()),
        }
    }
}

/// Free-function form of [`GfbmParams::validate`].
pub fn validate<T: Real>(alpha: T, gamma: T) -> Result<GfbmParams<T>, DomainError> {
    GfbmParams::validate(alpha, gamma)
}

/// Free-function form of [`GfbmParams::classify`].
pub fn classify<T: Real>(params: &GfbmParams<T>) -> Regime<T> {
    params.classify()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn derived_indices() {
        let p = GfbmParams::validate(0.3, 0.4).unwrap();
        assert_abs_diff_eq!(p.hurst, 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(p.hurst_deriv, -0.4, epsilon = 1e-15);
        let bm = GfbmParams::validate(0.0, 0.0).unwrap();
        assert_eq!(bm.hurst, 0.5);
    }

    #[test]
    fn boundaries_rejected() {
        assert!(matches!(
            GfbmParams::validate(-0.5, 0.0),
            Err(DomainError::AlphaTooSmall { .. })
        ));
        assert!(matches!(
            GfbmParams::validate(0.5, 0.0),
            Err(DomainError::AlphaTooLarge { .. })
        ));
        assert!(matches!(
            GfbmParams::validate(0.0, 1.0),
            Err(DomainError::GammaTooLarge { .. })
        ));
        assert!(matches!(
            GfbmParams::validate(0.0, -0.1),
            Err(DomainError::GammaNegative { .. })
        ));
        assert!(matches!(
            GfbmParams::validate(f64::NAN, 0.1),
            Err(DomainError::NonFinite { .. })
        ));
        match GfbmParams::validate(0.8, 0.2) {
            Err(DomainError::AlphaTooLarge { bound, by, .. }) => {
                assert_abs_diff_eq!(bound, 0.6, epsilon = 1e-15);
                assert_abs_diff_eq!(by, 0.2, epsilon = 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn regimes() {
        let r = GfbmParams::validate(0.25, 0.5).unwrap().classify();
        assert_eq!(r.kind, RegimeKind::Rough);
        assert_eq!(r.local_exponent, 0.75);
        let c = GfbmParams::validate(0.5, 0.2).unwrap().classify();
        assert_eq!(c.kind, RegimeKind::Critical);
        assert!(c.log_correction);
        let s = GfbmParams::validate(0.7, 0.8).unwrap().classify();
        assert_eq!(s.kind, RegimeKind::Smooth);
        assert_abs_diff_eq!(s.local_exponent, 0.2, epsilon = 1e-12);
        assert!(!s.log_correction);
    }

    #[test]
    fn near_critical_is_warning_only() {
        let p = GfbmParams::validate(0.5 - 1e-8, 0.3).unwrap();
        assert_eq!(p.classify().kind, RegimeKind::Rough);
        assert!(p.near_critical_warning().is_some());
        assert!(GfbmParams::validate(0.5, 0.3)
            .unwrap()
            .near_critical_warning()
            .is_none());
        assert!(GfbmParams::validate(0.4, 0.3)
            .unwrap()
            .near_critical_warning()
            .is_none());
    }

    #[test]
    fn domain_sweep_matches_hurst_range() {
        // Both characterizations of the domain agree on a fine rectangle.
        for i in 0..250 {
            let alpha = -1.0 + 2.5 * (i as f64 + 0.37) / 250.0;
            for j in 0..100 {
                let gamma = j as f64 / 100.0;
                let h = alpha - gamma / 2.0 + 0.5;
                let by_hurst = h > 0.0 && h < 1.0 && (0.0..1.0).contains(&gamma);
                let res = GfbmParams::validate(alpha, gamma);
                assert_eq!(res.is_ok(), by_hurst, "alpha={alpha}, gamma={gamma}");
                if let Ok(p) = res {
                    assert!(p.hurst > 0.0 && p.hurst < 1.0);
                    let r = p.classify();
                    if r.kind != RegimeKind::Critical {
                        assert!(r.local_exponent > 0.0 && r.local_exponent < 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn single_precision() {
        let p = GfbmParams::<f32>::validate(0.25, 0.5).unwrap();
        assert!((p.hurst - 0.5).abs() < 1e-6);
        assert_eq!(p.classify().kind, RegimeKind::Rough);
    }
}
