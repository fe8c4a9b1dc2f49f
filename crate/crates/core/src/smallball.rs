//! Monte Carlo small-deviation probabilities and their log-scale fits.
//!
//! Paths are drawn once on the finest grid; coarser grids are nested subgrids
//! of it, so the grid-doubling sequence costs a single simulation and the
//! successive estimates are strongly correlated.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::ProcessId;
use crate::error::{DomainError, Error, Result};
use crate::params::GfbmParams;
use crate::regression::fit_line;
use crate::simulate::{
    build_gram_with, factorize, increment_gram, CholeskyFactor, CovEngine, TimeGrid,
};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;

/// Minimum number of grid points on the coarsest level.
pub const MIN_GRID_POINTS: usize = 256;

/// Default Monte Carlo sizes.
pub const DEFAULT_N_ORIGIN: usize = 100_000;
pub const DEFAULT_N_LOCAL: usize = 20_000;

/// Paths generated per batch.
const CHUNK: usize = 2048;

/// Window of the supremum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmallBallMode {
    /// `sup_{s in [0, r]} |P(s)|`.
    Origin,
    /// `sup_{|h| <= r} |P(t + h) - P(t)|`.
    Local { t_center: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallBallQuery {
    pub process: ProcessId,
    pub mode: SmallBallMode,
    pub r: f64,
    /// Decreasing thresholds.
    pub eps_ladder: Vec<f64>,
    pub n_mc: usize,
    /// Points on the coarsest grid level.
    pub grid_points: usize,
    /// Number of grid doublings beyond `grid_points`.
    pub doublings: usize,
    pub seed: u64,
}

impl SmallBallQuery {
    pub fn origin(process: ProcessId, r: f64, eps_ladder: Vec<f64>, n_mc: usize) -> Self {
        Self {
            process,
            mode: SmallBallMode::Origin,
            r,
            eps_ladder,
            n_mc,
            grid_points: MIN_GRID_POINTS,
            doublings: 2,
            seed: 0,
        }
    }

    pub fn local(
        process: ProcessId,
        t_center: f64,
        r: f64,
        eps_ladder: Vec<f64>,
        n_mc: usize,
    ) -> Self {
        Self {
            mode: SmallBallMode::Local { t_center },
            ..Self::origin(process, r, eps_ladder, n_mc)
        }
    }

    /// Points on the finest level.
    pub fn finest_points(&self) -> usize {
        self.grid_points << self.doublings
    }

    pub fn validate(&self, params: &GfbmParams<f64>) -> Result<()> {
        if self.n_mc == 0 {
            return Err(DomainError::arg("n_mc", "need at least one path").into());
        }
        if self.grid_points < MIN_GRID_POINTS {
            return Err(
                DomainError::arg("grid_points", format!("need >= {MIN_GRID_POINTS}")).into(),
            );
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(DomainError::arg("r", "must be positive").into());
        }
        let e = &self.eps_ladder;
        if e.is_empty() || e.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(DomainError::arg("eps_ladder", "need positive thresholds").into());
        }
        if e.windows(2).any(|w| w[1] >= w[0]) {
            return Err(DomainError::arg("eps_ladder", "must be decreasing").into());
        }
        if let SmallBallMode::Local { t_center } = self.mode {
            if !(self.r < t_center / 2.0) {
                return Err(DomainError::arg(
                    "r",
                    format!("local mode needs r < t/2 = {}", t_center / 2.0),
                )
                .into());
            }
            let cap = self.r.powf(local_exponent(params, self.process));
            if e[0] >= cap {
                return Err(DomainError::arg(
                    "eps_ladder",
                    format!("local mode needs eps < r^(local index) = {cap:e}"),
                )
                .into());
            }
        }
        Ok(())
    }
}

fn local_exponent(params: &GfbmParams<f64>, process: ProcessId) -> f64 {
    match process {
        ProcessId::Zprime | ProcessId::Yprime => params.alpha - 0.5,
        _ => params.alpha + 0.5,
    }
}

/// Wilson score interval for `k` successes out of `n`.
pub fn wilson(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let den = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / den;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / den;
    let lo = if k == 0 {
        0.0
    } else {
        (center - half).max(0.0)
    };
    let hi = if k == n {
        1.0
    } else {
        (center + half).min(1.0)
    };
    (lo, hi)
}

/// One threshold's estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbEstimate {
    pub eps: f64,
    /// Fraction of paths with discrete sup `<= eps` on the accepted level.
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    pub successes: usize,
    /// No successes: only `ci_high` is informative.
    pub underflow: bool,
    /// Raw estimate on every grid level, coarsest first.
    pub p_levels: Vec<f64>,
    /// Grid points of the accepted level.
    pub accepted_points: usize,
    /// Whether the doubling rule stopped before the finest level.
    pub converged: bool,
    /// Estimate with the leading discretization bias removed (see [`estimate`]).
    pub p_corrected: f64,
    pub corrected_ci_low: f64,
    pub corrected_ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallBallEstimates {
    pub query: SmallBallQuery,
    pub params: GfbmParams<f64>,
    pub per_eps: Vec<ProbEstimate>,
    pub jitter: f64,
}

/// Draw `n` paths through `factor` and return `sup |value|` over each level's
/// rows, path-major (`n x levels`). The anchor is implicit at value 0.
fn simulate_sups(
    factor: &CholeskyFactor,
    level_rows: &[Vec<usize>],
    n: usize,
    seed: u64,
) -> Vec<f64> {
    let levels = level_rows.len();
    let dim = factor.dim;
    let mut sups = vec![0.0; n * levels];
    for start in (0..n).step_by(CHUNK) {
        let m = CHUNK.min(n - start);
        let rows = factor.sample_rows(seed, start, m);
        sups[start * levels..(start + m) * levels]
            .par_chunks_mut(levels)
            .enumerate()
            .for_each(|(i, out)| {
                let row = &rows[i * dim..(i + 1) * dim];
                for (o, idx) in out.iter_mut().zip(level_rows) {
                    *o = idx.iter().fold(0.0f64, |m, &k| m.max(row[k].abs()));
                }
            });
    }
    sups
}

/// Monte Carlo small-ball probabilities for every threshold of the query.
///
/// The finest level has `grid_points * 2^doublings` points; level `l` keeps
/// every `2^(doublings - l)`-th of them. For each threshold the accepted
/// level is the first one whose estimate differs from the previous level by
/// less than half its Wilson interval width; if none does, the finest level
/// is used and `converged` is false. Because the discrete sup misses the continuum
/// sup by a term of order `step^theta` (`theta` the local index), the
/// corrected estimate extrapolates the two finest levels:
/// `p_fine + (p_fine - p_coarse) * c` with `c = 2^-theta / (1 - 2^-theta)`,
/// with a normal interval from the per-path contrasts.
pub fn estimate(params: &GfbmParams<f64>, query: &SmallBallQuery) -> Result<SmallBallEstimates> {
    query.validate(params)?;
    let engine = match query.process {
        ProcessId::X | ProcessId::Y | ProcessId::Z => CovEngine::tabulated(params, query.process)?,
        ProcessId::Zprime | ProcessId::Yprime => CovEngine::direct(params, query.process)?,
        ProcessId::U => {
            return Err(Error::InvalidInput(
                "small balls are defined for X, Y, Z and derivatives".into(),
            ))
        }
    };
    estimate_with(&engine, query)
}

/// [`estimate`] with a prepared covariance engine.
pub fn estimate_with(engine: &CovEngine, query: &SmallBallQuery) -> Result<SmallBallEstimates> {
    let params = *engine.params();
    query.validate(&params)?;
    if engine.process != query.process {
        return Err(Error::InvalidInput(
            "engine and query disagree on the process".into(),
        ));
    }
    let fine = query.finest_points();
    let levels = query.doublings + 1;
    // Level l keeps every 2^(doublings - l)-th point of the finest grid.
    let stride = |l: usize| 1usize << (query.doublings - l);
    let (factor, level_rows) = match query.mode {
        SmallBallMode::Origin => {
            // Row k is time (k + 1) r / fine.
            let grid = TimeGrid::uniform(query.r / fine as f64, query.r, fine)?;
            let gram = build_gram_with(engine, &grid)?;
            let rows = (0..levels)
                .map(|l| (0..fine).filter(|k| (k + 1) % stride(l) == 0).collect())
                .collect::<Vec<Vec<usize>>>();
            (factorize(&gram)?, rows)
        }
        SmallBallMode::Local { t_center } => {
            // Rows 0..half are offsets -half..-1 steps, rows half.. are +1..+half.
            let half = fine / 2;
            let step = query.r / half as f64;
            let offsets: Vec<f64> = (1..=half)
                .rev()
                .map(|j| -(j as f64) * step)
                .chain((1..=half).map(|j| j as f64 * step))
                .collect();
            let gram = increment_gram(engine, t_center, &offsets)?;
            let rows = (0..levels)
                .map(|l| {
                    (1..=half)
                        .filter(|j| j % stride(l) == 0)
                        .flat_map(|j| [half - j, half + j - 1])
                        .collect()
                })
                .collect::<Vec<Vec<usize>>>();
            (factorize(&gram)?, rows)
        }
    };
    let sups = simulate_sups(&factor, &level_rows, query.n_mc, query.seed);
    let n = query.n_mc;
    let theta = local_exponent(&params, query.process);
    let c = 2f64.powf(-theta) / (1.0 - 2f64.powf(-theta));
    let per_eps = query
        .eps_ladder
        .iter()
        .map(|&eps| {
            let counts: Vec<usize> = (0..levels)
                .map(|l| (0..n).filter(|&i| sups[i * levels + l] <= eps).count())
                .collect();
            let p_levels: Vec<f64> = counts.iter().map(|&k| k as f64 / n as f64).collect();
            let mut accepted = levels - 1;
            let mut converged = false;
            for l in 1..levels {
                let (lo, hi) = wilson(counts[l], n, Z95);
                if (p_levels[l] - p_levels[l - 1]).abs() < 0.5 * (hi - lo) {
                    accepted = l;
                    converged = true;
                    break;
                }
            }
            let k = counts[accepted];
            let (ci_low, ci_high) = wilson(k, n, Z95);
            let (p_corrected, corrected_ci_low, corrected_ci_high) = if levels >= 2 {
                let (f, g) = (levels - 1, levels - 2);
                let vals: Vec<f64> = (0..n)
                    .map(|i| {
                        let pf = (sups[i * levels + f] <= eps) as u8 as f64;
                        let pc = (sups[i * levels + g] <= eps) as u8 as f64;
                        pf + c * (pf - pc)
                    })
                    .collect();
                let m = vals.iter().sum::<f64>() / n as f64;
                let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
                let half = Z95 * (var / n as f64).sqrt();
                let m = m.clamp(0.0, 1.0);
                (m, (m - half).max(0.0), (m + half).min(1.0))
            } else {
                (p_levels[0], ci_low, ci_high)
            };
            ProbEstimate {
                eps,
                p_hat: k as f64 / n as f64,
                ci_low,
                ci_high,
                n,
                successes: k,
                underflow: k == 0,
                p_levels,
                accepted_points: query.grid_points << accepted,
                converged,
                p_corrected,
                corrected_ci_low,
                corrected_ci_high,
            }
        })
        .collect();
    Ok(SmallBallEstimates {
        query: query.clone(),
        params,
        per_eps,
        jitter: factor.jitter,
    })
}

/// Log-scale fit of a set of estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallBallFit {
    pub probabilities: Vec<ProbEstimate>,
    /// Slope of `ln(-ln P)` against `ln(1/eps)`.
    pub fitted_exponent: f64,
    pub fitted_intercept: f64,
    /// `1/(alpha + 1/2)`, or `1/(alpha - 1/2)` for derivative processes.
    pub predicted_exponent: f64,
    /// Thresholds that entered the fit.
    pub used_eps: Vec<f64>,
    /// Whether bias-corrected probabilities were fitted.
    pub corrected: bool,
}

/// Probabilities usable in a `ln(-ln P)` fit.
pub const FIT_RANGE: (f64, f64) = (1e-4, 0.5);

fn fit_value(e: &ProbEstimate, corrected: bool) -> f64 {
    if corrected {
        e.p_corrected
    } else {
        e.p_hat
    }
}

/// Least-squares slope of `ln(-ln P)` against `ln(1/eps)` over the thresholds
/// whose estimate lies in [`FIT_RANGE`].
pub fn fit_exponent(est: &SmallBallEstimates, corrected: bool) -> Result<SmallBallFit> {
    let pts: Vec<(f64, f64, f64)> = est
        .per_eps
        .iter()
        .map(|e| (e.eps, fit_value(e, corrected)))
        .filter(|(_, p)| *p > FIT_RANGE.0 && *p < FIT_RANGE.1)
        .map(|(eps, p)| (eps, (1.0 / eps).ln(), (-p.ln()).ln()))
        .collect();
    if pts.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} thresholds with P in (1e-4, 0.5); need 4",
            pts.len()
        )));
    }
    let xy: Vec<(f64, f64)> = pts.iter().map(|p| (p.1, p.2)).collect();
    let (slope, intercept) =
        fit_line(&xy).ok_or_else(|| Error::InsufficientData("degenerate thresholds".into()))?;
    Ok(SmallBallFit {
        probabilities: est.per_eps.clone(),
        fitted_exponent: slope,
        fitted_intercept: intercept,
        predicted_exponent: 1.0 / local_exponent(&est.params, est.query.process),
        used_eps: pts.iter().map(|p| p.0).collect(),
        corrected,
    })
}

/// Location exponent from local-mode estimates at several centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationExponent {
    pub t_values: Vec<f64>,
    /// Thresholds shared by every center with P in range, and their slopes.
    pub eps: Vec<f64>,
    pub slopes: Vec<f64>,
    /// Mean of `slopes`.
    pub location_slope: f64,
    /// `-g/(2a + 1)`.
    pub target: f64,
}

/// Slope of `ln(-ln P)` against `ln t` at each common threshold.
pub fn location_exponent(runs: &[SmallBallEstimates], corrected: bool) -> Result<LocationExponent> {
    let mut t_values = Vec::new();
    for r in runs {
        match r.query.mode {
            SmallBallMode::Local { t_center } => t_values.push(t_center),
            SmallBallMode::Origin => {
                return Err(Error::InvalidInput(
                    "location exponent needs local-mode runs".into(),
                ))
            }
        }
    }
    if runs.len() < 2 {
        return Err(Error::InsufficientData("need at least two centers".into()));
    }
    let params = runs[0].params;
    let mut eps = Vec::new();
    let mut slopes = Vec::new();
    for e in &runs[0].per_eps {
        let mut pts = Vec::new();
        for (r, t) in runs.iter().zip(&t_values) {
            let Some(pe) = r.per_eps.iter().find(|q| q.eps == e.eps) else {
                break;
            };
            let p = fit_value(pe, corrected);
            if !(p > FIT_RANGE.0 && p < FIT_RANGE.1) {
                break;
            }
            pts.push((t.ln(), (-p.ln()).ln()));
        }
        if pts.len() == runs.len() {
            if let Some((s, _)) = fit_line(&pts) {
                eps.push(e.eps);
                slopes.push(s);
            }
        }
    }
    if slopes.is_empty() {
        return Err(Error::InsufficientData(
            "no threshold has P in (1e-4, 0.5) at every center".into(),
        ));
    }
    Ok(LocationExponent {
        t_values,
        location_slope: slopes.iter().sum::<f64>() / slopes.len() as f64,
        eps,
        slopes,
        target: -params.gamma / (2.0 * params.alpha + 1.0),
    })
}

/// `P{sup_[0,r] |Y| <= eps}` for each threshold.
///
/// At `alpha = 0` the process vanishes and every probability is exactly 1.
pub fn y_smallball_floor(
    params: &GfbmParams<f64>,
    r: f64,
    eps_ladder: &[f64],
    n_mc: usize,
    seed: u64,
) -> Result<SmallBallEstimates> {
    let mut query = SmallBallQuery::origin(ProcessId::Y, r, eps_ladder.to_vec(), n_mc);
    query.seed = seed;
    query.doublings = 0;
    if params.alpha == 0.0 {
        query.validate(params)?;
        let (lo, hi) = wilson(n_mc, n_mc, Z95);
        let per_eps = eps_ladder
            .iter()
            .map(|&eps| ProbEstimate {
                eps,
                p_hat: 1.0,
                ci_low: lo,
                ci_high: hi,
                n: n_mc,
                successes: n_mc,
                underflow: false,
                p_levels: vec![1.0],
                accepted_points: query.grid_points,
                converged: true,
                p_corrected: 1.0,
                corrected_ci_low: lo,
                corrected_ci_high: hi,
            })
            .collect();
        return Ok(SmallBallEstimates {
            query,
            params: *params,
            per_eps,
            jitter: 0.0,
        });
    }
    estimate(params, &query)
}

/// Slope of `ln(-ln P)` against `ln(1/eps)` for a smooth process, where the
/// growth of `ln(1/P)` is at most linear in `1/eps`.
pub fn y_floor_slope(est: &SmallBallEstimates) -> Result<f64> {
    let pts: Vec<(f64, f64)> = est
        .per_eps
        .iter()
        .filter(|e| e.p_hat > FIT_RANGE.0 && e.p_hat < FIT_RANGE.1)
        .map(|e| ((1.0 / e.eps).ln(), (-e.p_hat.ln()).ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InsufficientData(
            "need two thresholds with P in (1e-4, 0.5)".into(),
        ));
    }
    fit_line(&pts)
        .map(|f| f.0)
        .ok_or_else(|| Error::InsufficientData("degenerate thresholds".into()))
}

/// `P{sup_[0,1] |W| <= eps}` for standard Brownian motion, by the
/// alternating eigenfunction series.
pub fn brownian_smallball(eps: f64) -> f64 {
    if eps <= 0.0 {
        return 0.0;
    }
    let pi = std::f64::consts::PI;
    let mut s = 0.0;
    for k in 0..200 {
        let m = (2 * k + 1) as f64;
        let term = 4.0 / (pi * m) * (-(m * m) * pi * pi / (8.0 * eps * eps)).exp();
        if k % 2 == 0 {
            s += term;
        } else {
            s -= term;
        }
        if term < 1e-18 {
            break;
        }
    }
    s.clamp(0.0, 1.0)
}

/// JSON report for the command line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmallBallReport {
    pub query: SmallBallQuery,
    pub per_eps: Vec<ReportRow>,
    pub fit: Option<SmallBallFit>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub eps: f64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    pub p_corrected: f64,
    pub underflow: bool,
}

impl SmallBallReport {
    pub fn new(est: &SmallBallEstimates, fit: Option<SmallBallFit>) -> Self {
        Self {
            query: est.query.clone(),
            per_eps: est
                .per_eps
                .iter()
                .map(|e| ReportRow {
                    eps: e.eps,
                    p_hat: e.p_hat,
                    ci_low: e.ci_low,
                    ci_high: e.ci_high,
                    n: e.n,
                    p_corrected: e.p_corrected,
                    underflow: e.underflow,
                })
                .collect(),
            fit,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("eps,p_hat,ci_low,ci_high,n,p_corrected,underflow\n");
        for r in &self.per_eps {
            s.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{}\n",
                r.eps, r.p_hat, r.ci_low, r.ci_high, r.n, r.p_corrected, r.underflow
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::CovarianceModel;
    use approx::assert_relative_eq;
    use statrs::function::erf::erf;

    fn params(a: f64, g: f64) -> GfbmParams<f64> {
        GfbmParams::validate(a, g).unwrap()
    }

    fn quick(process: ProcessId, r: f64, eps: Vec<f64>, n: usize) -> SmallBallQuery {
        let mut q = SmallBallQuery::origin(process, r, eps, n);
        q.doublings = 0;
        q.seed = 3;
        q
    }

    /// Reflection-principle image sum for `P{sup_[0,1] |W| <= eps}`.
    fn image_sum(eps: f64) -> f64 {
        let phi = |x: f64| 0.5 * (1.0 + erf(x / 2f64.sqrt()));
        (-60i32..=60)
            .map(|k| {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                sign * (phi((2 * k + 1) as f64 * eps) - phi((2 * k - 1) as f64 * eps))
            })
            .sum()
    }

    #[test]
    fn brownian_series_agrees_with_image_sum() {
        for eps in [0.3, 0.5, 1.0, 2.0, 3.0] {
            assert_relative_eq!(brownian_smallball(eps), image_sum(eps), epsilon = 1e-9);
        }
        assert_relative_eq!(brownian_smallball(0.5), 0.009157, max_relative = 1e-3);
        assert_eq!(brownian_smallball(0.0), 0.0);
    }

    #[test]
    fn wilson_interval() {
        let (lo, hi) = wilson(0, 100, Z95);
        assert_eq!(lo, 0.0);
        assert_relative_eq!(hi, Z95 * Z95 / (100.0 + Z95 * Z95), max_relative = 1e-12);
        let (lo, hi) = wilson(50, 100, Z95);
        assert!(lo < 0.5 && hi > 0.5);
        assert_relative_eq!(0.5 - lo, hi - 0.5, epsilon = 1e-12);
        assert_eq!(wilson(100, 100, Z95).1, 1.0);
    }

    #[test]
    fn query_validation() {
        let p = params(0.25, 0.5);
        assert!(quick(ProcessId::X, 1.0, vec![0.5], 0).validate(&p).is_err());
        assert!(quick(ProcessId::X, 1.0, vec![0.5, 0.6], 10)
            .validate(&p)
            .is_err());
        assert!(quick(ProcessId::X, 1.0, vec![], 10).validate(&p).is_err());
        let mut q = quick(ProcessId::X, 1.0, vec![0.5], 10);
        q.grid_points = 64;
        assert!(q.validate(&p).is_err());
        assert!(
            SmallBallQuery::local(ProcessId::X, 1.0, 0.6, vec![0.01], 10)
                .validate(&p)
                .is_err()
        );
        // eps must stay below r^(a + 1/2).
        assert!(SmallBallQuery::local(ProcessId::X, 1.0, 0.1, vec![0.2], 10)
            .validate(&p)
            .is_err());
        assert!(SmallBallQuery::local(ProcessId::X, 1.0, 0.1, vec![0.1], 10)
            .validate(&p)
            .is_ok());
        assert!(estimate(&p, &quick(ProcessId::U, 1.0, vec![0.5], 10)).is_err());
    }

    #[test]
    fn wide_thresholds_are_certain_and_estimates_are_monotone() {
        let p = params(0.25, 0.5);
        let sd = CovarianceModel::new(p).unwrap().c_var().sqrt();
        let eps = vec![6.0 * sd, 3.0 * sd, 0.8, 0.5, 0.3, 0.2];
        let est = estimate(&p, &quick(ProcessId::X, 1.0, eps, 4000)).unwrap();
        assert!(est.per_eps[0].ci_high == 1.0 && est.per_eps[0].p_hat > 0.999);
        assert!(est.per_eps[1].ci_high >= 0.999 - 1e-3);
        for w in est.per_eps.windows(2) {
            assert!(w[0].p_hat >= w[1].p_hat);
        }
        for e in &est.per_eps {
            assert!((0.0..=1.0).contains(&e.p_hat) && e.ci_low <= e.p_hat && e.p_hat <= e.ci_high);
        }
    }

    #[test]
    fn underflow_is_flagged() {
        let p = params(0.0, 0.0);
        let est = estimate(&p, &quick(ProcessId::X, 1.0, vec![0.1], 500)).unwrap();
        let e = &est.per_eps[0];
        assert!(e.underflow && e.p_hat == 0.0 && e.ci_low == 0.0 && e.ci_high > 0.0);
    }

    #[test]
    fn brownian_probabilities_match_the_series() {
        let p = params(0.0, 0.0);
        let mut q = SmallBallQuery::origin(ProcessId::X, 1.0, vec![1.0, 0.8, 0.6], 20_000);
        q.seed = 8;
        let est = estimate(&p, &q).unwrap();
        for e in &est.per_eps {
            let exact = brownian_smallball(e.eps);
            // The discrete sup biases the raw estimate upward.
            assert!(e.p_levels.windows(2).all(|w| w[0] >= w[1]));
            assert!(e.p_hat > exact);
            let half = e.corrected_ci_high - e.corrected_ci_low;
            assert!(
                (e.p_corrected - exact).abs() < half,
                "{} vs {exact}",
                e.p_corrected
            );
        }
    }

    #[test]
    fn self_similarity_collapse() {
        let p = params(0.25, 0.5);
        let c: f64 = 4.0;
        let eps = vec![0.5, 0.3, 0.2];
        let a = estimate(&p, &quick(ProcessId::X, 0.25, eps.clone(), 4000)).unwrap();
        let scaled = eps.iter().map(|e| e * c.powf(p.hurst)).collect();
        let b = estimate(&p, &quick(ProcessId::X, 1.0, scaled, 4000)).unwrap();
        for (x, y) in a.per_eps.iter().zip(&b.per_eps) {
            let width = (x.ci_high - x.ci_low) + (y.ci_high - y.ci_low);
            assert!((x.p_hat - y.p_hat).abs() <= width);
        }
    }

    #[test]
    fn anderson_domination() {
        let p = params(0.25, 0.5);
        let eps = vec![0.8, 0.5, 0.3];
        let x = estimate(&p, &quick(ProcessId::X, 1.0, eps.clone(), 4000)).unwrap();
        let z = estimate(&p, &quick(ProcessId::Z, 1.0, eps, 4000)).unwrap();
        for (a, b) in x.per_eps.iter().zip(&z.per_eps) {
            let ci = (a.ci_high - a.ci_low) + (b.ci_high - b.ci_low);
            assert!(a.p_hat <= b.p_hat + 3.0 * ci, "{} {}", a.p_hat, b.p_hat);
        }
    }

    #[test]
    fn exponent_fit() {
        let p = params(0.25, 0.5);
        let eps = vec![0.7, 0.6, 0.5, 0.45, 0.4, 0.35, 0.3];
        let est = estimate(&p, &quick(ProcessId::X, 1.0, eps, 20_000)).unwrap();
        let fit = fit_exponent(&est, false).unwrap();
        assert_relative_eq!(fit.predicted_exponent, 4.0 / 3.0, epsilon = 1e-12);
        assert!(
            (fit.fitted_exponent - fit.predicted_exponent).abs() < 0.3,
            "{}",
            fit.fitted_exponent
        );
        let few = estimate(&p, &quick(ProcessId::X, 1.0, vec![0.7, 0.6], 2000)).unwrap();
        assert!(matches!(
            fit_exponent(&few, false),
            Err(Error::InsufficientData(_))
        ));
        let report = SmallBallReport::new(&est, Some(fit));
        let v: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        assert_eq!(v["per_eps"].as_array().unwrap().len(), 7);
        assert_eq!(v["query"]["mode"]["kind"], "origin");
        assert!(v["fit"]["fitted_exponent"].is_number());
    }

    #[test]
    fn local_windows_and_location_exponent() {
        let p = params(0.25, 0.5);
        let eng = CovEngine::tabulated(&p, ProcessId::X).unwrap();
        let r: f64 = 2f64.powi(-5);
        let eps: Vec<f64> = [0.6, 0.45, 0.35].iter().map(|f| f * r.powf(0.75)).collect();
        let runs: Vec<_> = [0.5, 2.0]
            .iter()
            .map(|&t| {
                let mut q = SmallBallQuery::local(ProcessId::X, t, r, eps.clone(), 4000);
                q.doublings = 0;
                estimate_with(&eng, &q).unwrap()
            })
            .collect();
        // Larger t has smaller increments, so balls are likelier.
        for (a, b) in runs[0].per_eps.iter().zip(&runs[1].per_eps) {
            assert!(b.p_hat > a.p_hat);
        }
        let loc = location_exponent(&runs, false).unwrap();
        assert_relative_eq!(loc.target, -1.0 / 3.0, epsilon = 1e-12);
        assert!(loc.location_slope < 0.0);
        assert!(location_exponent(&runs[..1], false).is_err());
    }

    #[test]
    fn y_floor() {
        let est = y_smallball_floor(&params(0.0, 0.3), 1.0, &[0.1, 0.01], 100, 0).unwrap();
        assert!(est.per_eps.iter().all(|e| e.p_hat == 1.0));
        let p = params(0.3, 0.4);
        let sd = CovarianceModel::new(p)
            .unwrap()
            .unit_variance(ProcessId::Y)
            .unwrap()
            .sqrt();
        let eps: Vec<f64> = [1.0, 0.4, 0.2, 0.1, 0.05].iter().map(|f| f * sd).collect();
        let est = y_smallball_floor(&p, 1.0, &eps, 8000, 1).unwrap();
        assert!(y_floor_slope(&est).unwrap() <= 1.15);
        let huge = y_smallball_floor(&p, 1.0, &[50.0 * sd], 500, 1).unwrap();
        assert_eq!(huge.per_eps[0].p_hat, 1.0);
    }
}
