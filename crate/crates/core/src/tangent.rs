//! Local structure checks: tangent-process covariances, the one-sided
//! conditional-variance bound and the increment-ratio limit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceModel, ProcessId};
use crate::error::{DomainError, Error, Result};
use crate::params::{GfbmParams, RegimeKind};
use crate::quadrature::beta;
use crate::simulate::{factorize, CovEngine};

/// Largest conditioning set accepted by [`slnd_gap`].
pub const MAX_CONDITIONING: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentQuery {
    pub t_center: f64,
    /// Decreasing zoom factors.
    pub u_ladder: Vec<f64>,
    /// Increasing lags in `[0, T]`.
    pub tau_grid: Vec<f64>,
    /// `X` or `Z`.
    pub process: ProcessId,
}

impl TangentQuery {
    /// `tau` in `{0, 1/8, ..., 1}` and `u = 2^-2 .. 2^-8`.
    pub fn standard(t_center: f64, process: ProcessId) -> Self {
        Self {
            t_center,
            u_ladder: (2..=8).map(|k| 2f64.powi(-k)).collect(),
            tau_grid: (0..=8).map(|k| k as f64 / 8.0).collect(),
            process,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_center > 0.0 && self.t_center.is_finite()) {
            return Err(DomainError::arg("t_center", "must be positive").into());
        }
        if !matches!(self.process, ProcessId::X | ProcessId::Z) {
            return Err(Error::InvalidInput(
                "tangent processes are defined for X and Z".into(),
            ));
        }
        let u = &self.u_ladder;
        if u.is_empty() || u.iter().any(|x| !(*x > 0.0)) || u.windows(2).any(|w| w[1] >= w[0]) {
            return Err(DomainError::arg("u_ladder", "need decreasing positive values").into());
        }
        let tau = &self.tau_grid;
        if tau.is_empty() || tau[0] < 0.0 || tau.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DomainError::arg("tau_grid", "need increasing lags >= 0").into());
        }
        let reach = u[0] * tau[tau.len() - 1];
        if !(reach < self.t_center / 2.0) {
            return Err(DomainError::arg(
                "u_ladder",
                format!("u * max tau = {reach} must stay below t/2"),
            )
            .into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentReport {
    pub query: TangentQuery,
    /// `local_variance t^{-g}`, the variance scale of the limit.
    pub target_scale: f64,
    /// Max abs deviation from the limit covariance, per `u`.
    pub errors: Vec<f64>,
    /// `errors` divided by the largest entry of the limit covariance.
    pub relative_errors: Vec<f64>,
    /// Whether errors never increase along the ladder beyond `plateau_tol`.
    pub decreasing: bool,
    pub plateau_tol: f64,
}

impl TangentReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("u,error,relative_error\n");
        for ((u, e), r) in self
            .query
            .u_ladder
            .iter()
            .zip(&self.errors)
            .zip(&self.relative_errors)
        {
            s.push_str(&format!("{u:.16e},{e:.16e},{r:.16e}\n"));
        }
        s
    }
}

/// Deviation of the covariance of `V(tau) = (P(t + u tau) - P(t)) / u^{a+1/2}`
/// from `local_variance t^{-g} (tau1^{2a+1} + tau2^{2a+1} - |tau1 - tau2|^{2a+1}) / 2`.
///
/// The covariance is assembled by polarization from exact increment variances,
/// which is algebraically the same as the four-term difference of covariances
/// but keeps full precision when `u` is small.
pub fn tangent_cov_error(params: &GfbmParams<f64>, query: &TangentQuery) -> Result<TangentReport> {
    query.validate()?;
    if params.classify().kind != RegimeKind::Rough {
        return Err(Error::Regime("tangent covariance needs alpha < 1/2".into()));
    }
    let model = CovarianceModel::new(*params)?;
    let local_variance = model
        .constants()?
        .local_variance
        .ok_or_else(|| Error::Regime("local_variance is infinite for alpha >= 1/2".into()))?;
    let (a, g, t) = (params.alpha, params.gamma, query.t_center);
    let chi2 = 2.0 * a + 1.0;
    let scale = local_variance * t.powf(-g);
    let tau = &query.tau_grid;
    let fbm = |x: f64, y: f64| 0.5 * (x.powf(chi2) + y.powf(chi2) - (x - y).abs().powf(chi2));
    let target_max = tau
        .iter()
        .flat_map(|&x| tau.iter().map(move |&y| (scale * fbm(x, y)).abs()))
        .fold(0.0, f64::max);
    let errors = query
        .u_ladder
        .par_iter()
        .map(|&u| -> Result<f64> {
            let inc = |lo: f64, h: f64| -> Result<f64> {
                Ok(model.increment_step(query.process, lo, h)?.value)
            };
            let d0: Vec<f64> = tau.iter().map(|&x| inc(t, u * x)).collect::<Result<_>>()?;
            let norm = u.powf(chi2);
            let mut worst: f64 = 0.0;
            for i in 0..tau.len() {
                for j in i..tau.len() {
                    let dij = inc(t + u * tau[i], u * (tau[j] - tau[i]))?;
                    let c = 0.5 * (d0[i] + d0[j] - dij) / norm;
                    worst = worst.max((c - scale * fbm(tau[i], tau[j])).abs());
                }
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?;
    let plateau_tol = 1e-9 * target_max;
    let decreasing = errors.windows(2).all(|w| w[1] <= w[0] + plateau_tol);
    Ok(TangentReport {
        query: query.clone(),
        target_scale: scale,
        relative_errors: errors.iter().map(|e| e / target_max).collect(),
        errors,
        decreasing,
        plateau_tol,
    })
}

/// Variance of the derivative process against the closed form
/// `a^2 [B(1-g, 1+g-2a) + B(2a-1, 1-g)] t^{2H-2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeVariance {
    pub t: f64,
    /// `Var Y'(t) + Var Z'(t)` by quadrature.
    pub quadrature: f64,
    /// The closed form.
    pub closed_form: f64,
    /// The closed form at `t = 1`, the square of the tangent scale constant.
    pub unit_constant: f64,
}

/// Smooth-regime tangent scale: the line process `c t^{H-1} B^1` has variance
/// `Var X'(t)` at `tau = 1`.
pub fn derivative_variance(params: &GfbmParams<f64>, t: f64) -> Result<DerivativeVariance> {
    if params.classify().kind != RegimeKind::Smooth {
        return Err(Error::Regime("derivative process needs alpha > 1/2".into()));
    }
    let model = CovarianceModel::new(*params)?;
    let quadrature = model.cov_yprime(t, t)?.value + model.cov_zprime(t, t)?.value;
    let (a, g) = (params.alpha, params.gamma);
    let unit = a * a * (beta(1.0 - g, 1.0 + g - 2.0 * a)? + beta(2.0 * a - 1.0, 1.0 - g)?);
    Ok(DerivativeVariance {
        t,
        quadrature,
        closed_form: unit * t.powf(2.0 * params.hurst - 2.0),
        unit_constant: unit,
    })
}

/// Conditional variance of `Z(t)` (or `Z'(t)`) given the values at the
/// conditioning times, with the one-sided lower bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlndGap {
    pub s: f64,
    pub t: f64,
    pub horizon: f64,
    pub conditioning: Vec<f64>,
    pub process: ProcessId,
    pub cond_var: f64,
    /// The bound as stated for the one-sided property.
    pub bound: f64,
    /// For `Z'`: the bound including the factor `a^2` of the derivative
    /// kernel `a (t-u)^{a-1}`, which is what conditioning on the driving noise
    /// gives. Equal to `bound` for `Z`.
    pub kernel_bound: f64,
    /// Unconditional variance at `t`.
    pub variance: f64,
    pub jitter: f64,
}

impl SlndGap {
    /// `cond_var >= bound - slack * variance`.
    pub fn satisfied(&self, slack: f64) -> bool {
        self.cond_var >= self.bound - slack * self.variance
    }
}

/// One-sided local nondeterminism gap.
///
/// For `alpha <= 1/2` the process is `Z` and the bound is
/// `(t-s)^{2a+1} / ((2a+1) b^g)`; for `alpha > 1/2` it is `Z'` with
/// `(t-s)^{2a-1} / ((2a-1) b^g)`. The conditioning Gram matrix goes through
/// the jitter ladder of [`factorize`].
pub fn slnd_gap(
    engine: &CovEngine,
    conditioning: &[f64],
    s: f64,
    t: f64,
    horizon: f64,
) -> Result<SlndGap> {
    let p = *engine.params();
    let smooth = p.alpha > 0.5;
    let want = if smooth {
        ProcessId::Zprime
    } else {
        ProcessId::Z
    };
    if engine.process != want {
        return Err(Error::InvalidInput(format!(
            "alpha = {} needs a {want:?} engine, got {:?}",
            p.alpha, engine.process
        )));
    }
    if !(0.0 <= s && s < t && t <= horizon) {
        return Err(DomainError::arg("times", "need 0 <= s < t <= b").into());
    }
    if conditioning.len() > MAX_CONDITIONING {
        return Err(
            DomainError::arg("conditioning", format!("at most {MAX_CONDITIONING} points")).into(),
        );
    }
    if conditioning.iter().any(|r| !(*r >= 0.0 && *r <= s)) {
        return Err(DomainError::arg("conditioning", "times must lie in [0, s]").into());
    }
    if conditioning.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DomainError::arg("conditioning", "times must be increasing").into());
    }
    let n = conditioning.len();
    let variance = engine.cov(t, t)?;
    let mut cond_var = variance;
    let mut jitter = 0.0;
    if n > 0 {
        let mut gram = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = engine.cov(conditioning[i], conditioning[j])?;
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        let f = factorize(&gram)?;
        jitter = f.jitter;
        let c = nalgebra::DVector::from_iterator(
            f.active.len(),
            f.active
                .iter()
                .map(|&i| engine.cov(conditioning[i], t))
                .collect::<Result<Vec<_>>>()?,
        );
        let y = f
            .lower
            .solve_lower_triangular(&c)
            .ok_or_else(|| Error::NotPsd {
                module: "tangent",
                detail: "singular conditioning factor".into(),
            })?;
        cond_var = variance - y.norm_squared();
    }
    let (a, g) = (p.alpha, p.gamma);
    let (bound, kernel_bound) = if smooth {
        let b = (t - s).powf(2.0 * a - 1.0) / ((2.0 * a - 1.0) * horizon.powf(g));
        (b, a * a * b)
    } else {
        let b = (t - s).powf(2.0 * a + 1.0) / ((2.0 * a + 1.0) * horizon.powf(g));
        (b, b)
    };
    Ok(SlndGap {
        s,
        t,
        horizon,
        conditioning: conditioning.to_vec(),
        process: want,
        cond_var,
        bound,
        kernel_bound,
        variance,
        jitter,
    })
}

/// Engine for [`slnd_gap`]: tabulated `Z` in the rough case, direct `Z'` otherwise.
pub fn slnd_engine(params: &GfbmParams<f64>) -> Result<CovEngine> {
    if params.alpha > 0.5 {
        CovEngine::direct(params, ProcessId::Zprime)
    } else {
        CovEngine::tabulated(params, ProcessId::Z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementRatio {
    pub t: f64,
    pub s_values: Vec<f64>,
    /// `E[(Z(t) - Z(s))^2] / |t - s|^{2a+1}`.
    pub ratios: Vec<f64>,
    /// `local_variance t^{-g}`.
    pub limit: f64,
    /// `|ratio / limit - 1|` at the last `s`.
    pub final_deviation: f64,
}

/// Normalized increment variance of `Z` as `s -> t`.
pub fn increment_ratio(
    params: &GfbmParams<f64>,
    t: f64,
    s_ladder: &[f64],
) -> Result<IncrementRatio> {
    if params.classify().kind != RegimeKind::Rough {
        return Err(Error::Regime(
            "the increment ratio limit needs alpha < 1/2".into(),
        ));
    }
    if s_ladder.is_empty() || s_ladder.iter().any(|s| !(*s >= 0.0 && *s != t)) {
        return Err(DomainError::arg("s_ladder", "need times >= 0 different from t").into());
    }
    let model = CovarianceModel::new(*params)?;
    let local_variance = model
        .constants()?
        .local_variance
        .expect("rough regime has finite local_variance");
    let limit = local_variance * t.powf(-params.gamma);
    let chi2 = 2.0 * params.alpha + 1.0;
    let ratios = s_ladder
        .par_iter()
        .map(|&s| -> Result<f64> {
            let (lo, h) = if s < t { (s, t - s) } else { (t, s - t) };
            Ok(model.increment_step(ProcessId::Z, lo, h)?.value / h.powf(chi2))
        })
        .collect::<Result<Vec<f64>>>()?;
    let final_deviation = (ratios[ratios.len() - 1] / limit - 1.0).abs();
    Ok(IncrementRatio {
        t,
        s_values: s_ladder.to_vec(),
        ratios,
        limit,
        final_deviation,
    })
}

/// `s = t (1 - 2^{-k})` for `k = 1..=k_max`.
pub fn approach_ladder(t: f64, k_max: i32) -> Vec<f64> {
    (1..=k_max).map(|k| t * (1.0 - 2f64.powi(-k))).collect()
}
