//! The acceptance suite: each criterion compares the library against a
//! classical closed form, an exact covariance or a predicted scaling exponent.
//!
//! A [`Budget::Fast`] run uses fewer Monte Carlo paths with unchanged
//! tolerances, so its statistical criteria are noisier.

use std::f64::consts::{PI, SQRT_2};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use statrs::function::gamma::gamma;

use crate::covariance::{CovarianceModel, ProcessId};
use crate::error::{Error, Result};
use crate::lamperti::{r_u, spectral_table, tail_mass_fit, LampertiTable};
use crate::params::GfbmParams;
use crate::pathstats::{
    chung_liminf, dyadic_ladder, ensemble_box_dim, holder_estimate, lil_limsup, local_ensemble,
    location_regression, uniform_modulus, HolderWindow,
};
use crate::simulate::{
    build_gram, increment_sample, levinson_sample, max_wick_deviation, oracle_sample_z, simulate,
    time_invert, CovEngine, TimeGrid,
};
use crate::smallball::{
    brownian_smallball, estimate, estimate_with, fit_exponent, location_exponent, SmallBallQuery,
};
use crate::tangent::{
    approach_ladder, increment_ratio, slnd_engine, slnd_gap, tangent_cov_error, TangentQuery,
};

/// Rough parameter points shared by several criteria.
pub const ROUGH_POINTS: [(f64, f64); 3] = [(0.25, 0.5), (0.3, 0.4), (-0.1, 0.3)];

/// Largest Wick z-score accepted for a sample covariance entry.
pub const WICK_LIMIT: f64 = 5.0;

/// Identifier and short name of every criterion.
pub const CRITERIA: [(u32, &str); 13] = [
    (1, "fBm covariance"),
    (2, "decomposition identity"),
    (3, "sampler fidelity"),
    (4, "increment ratio"),
    (5, "conditional variance bound"),
    (6, "tangent convergence"),
    (7, "small-ball exponent"),
    (8, "Chung and LIL location scaling"),
    (9, "Brownian calibration"),
    (10, "spectral consistency"),
    (11, "time inversion"),
    (12, "regularity split"),
    (13, "box dimension"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    Fast,
    Full,
}

impl Budget {
    fn paths(self, full: usize) -> usize {
        match self {
            Budget::Full => full,
            Budget::Fast => (full / 10).max(50),
        }
    }
}

impl FromStr for Budget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Budget::Fast),
            "full" => Ok(Budget::Full),
            _ => Err(Error::InvalidInput(format!(
                "budget `{s}`: expected fast or full"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub summary: String,
    pub details: Value,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub budget: Budget,
    pub seed: u64,
    pub passed: usize,
    pub failed: usize,
    pub results: Vec<CriterionResult>,
}

impl VerifySummary {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}

struct Check {
    passed: bool,
    summary: String,
    details: Value,
}

/// Runs one criterion. Library errors count as a failure and are reported in
/// the summary.
pub fn run_criterion(id: u32, budget: Budget, seed: u64) -> Result<CriterionResult> {
    let name = CRITERIA
        .iter()
        .find(|(k, _)| *k == id)
        .map(|(_, n)| n.to_string())
        .ok_or_else(|| Error::InvalidInput(format!("no criterion {id}")))?;
    let seed = seed.wrapping_add(1000 * id as u64);
    let start = Instant::now();
    let out = match id {
        1 => fbm_covariance(seed),
        2 => decomposition(seed),
        3 => sampler_fidelity(budget, seed),
        4 => increment_ratios(),
        5 => conditional_variance(seed),
        6 => tangent_convergence(),
        7 => small_ball(budget, seed),
        8 => location_scaling(budget, seed),
        9 => brownian_calibration(budget, seed),
        10 => spectral_consistency(),
        11 => inversion(budget, seed),
        12 => regularity_split(budget, seed),
        _ => box_dimension(budget, seed),
    };
    let check = out.unwrap_or_else(|e| Check {
        passed: false,
        summary: format!("error: {e}"),
        details: Value::Null,
    });
    Ok(CriterionResult {
        id,
        name,
        passed: check.passed,
        summary: check.summary,
        details: check.details,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

/// Runs every criterion in order.
pub fn run_all(budget: Budget, seed: u64) -> Result<VerifySummary> {
    let results = CRITERIA
        .iter()
        .map(|(id, _)| run_criterion(*id, budget, seed))
        .collect::<Result<Vec<_>>>()?;
    let passed = results.iter().filter(|r| r.passed).count();
    Ok(VerifySummary {
        budget,
        seed,
        passed,
        failed: results.len() - passed,
        results,
    })
}

/// Variance of fBm at time 1 under the moving-average normalization.
pub fn fbm_unit_variance(hurst: f64) -> f64 {
    gamma(hurst + 0.5).powi(2) / (gamma(2.0 * hurst + 1.0) * (PI * hurst).sin())
}

fn random_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    (rng.random_range(0.01..5.0), rng.random_range(0.01..5.0))
}

fn fbm_covariance(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for alpha in [-0.25, 0.0, 0.25] {
        let p = GfbmParams::validate(alpha, 0.0)?;
        let model = CovarianceModel::new(p)?;
        let h2 = 2.0 * p.hurst;
        let c = fbm_unit_variance(p.hurst);
        let mut dev: f64 = 0.0;
        for _ in 0..50 {
            let (s, t) = random_pair(&mut rng);
            let fbm = 0.5 * c * (t.powf(h2) + s.powf(h2) - (t - s).abs().powf(h2));
            dev = dev.max((model.cov_x(s, t)?.value - fbm).abs());
        }
        worst = worst.max(dev);
        rows.push(
            json!({"alpha": alpha, "max_abs_dev": dev, "c_var": model.c_var(), "closed_form": c}),
        );
    }
    Ok(Check {
        passed: worst <= 1e-8,
        summary: format!("max |cov_x - fBm| = {worst:.2e} (limit 1e-8)"),
        details: json!(rows),
    })
}

fn decomposition(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for (a, g) in ROUGH_POINTS {
        let model = CovarianceModel::new(GfbmParams::validate(a, g)?)?;
        let mut dev: f64 = 0.0;
        for _ in 0..100 {
            let (s, t) = random_pair(&mut rng);
            let d = model.cov_x(s, t)?.value - model.cov_y(s, t)?.value - model.cov_z(s, t)?.value;
            dev = dev.max(d.abs());
        }
        worst = worst.max(dev);
        rows.push(json!({"alpha": a, "gamma": g, "max_abs_dev": dev}));
    }
    Ok(Check {
        passed: worst <= 1e-8,
        summary: format!("max |cov_x - cov_y - cov_z| = {worst:.2e} (limit 1e-8)"),
        details: json!(rows),
    })
}

fn sampler_fidelity(budget: Budget, seed: u64) -> Result<Check> {
    let n = budget.paths(20_000);
    let grid = TimeGrid::uniform(0.25, 2.0, 64)?;
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for (k, (a, g)) in ROUGH_POINTS.into_iter().enumerate() {
        let p = GfbmParams::validate(a, g)?;
        let ens = simulate(&p, &grid, ProcessId::X, n, seed + k as u64)?;
        let chol = max_wick_deviation(&ens.sample_cov(), &build_gram(&p, &grid, ProcessId::X)?, n);
        let oracle = oracle_sample_z(&p, &grid, 2f64.powi(-12), n, seed + 10 + k as u64)?;
        let orc = max_wick_deviation(
            &oracle.sample_cov(),
            &build_gram(&p, &grid, ProcessId::Z)?,
            n,
        );
        worst = worst.max(chol).max(orc);
        rows.push(json!({"alpha": a, "gamma": g, "cholesky_wick": chol, "oracle_wick": orc, "jitter": ens.meta.jitter}));
    }
    Ok(Check {
        passed: worst <= WICK_LIMIT,
        summary: format!("largest Wick z-score {worst:.2} over Cholesky and oracle ensembles, n = {n} (limit {WICK_LIMIT})"),
        details: json!(rows),
    })
}

fn increment_ratios() -> Result<Check> {
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for (a, g) in ROUGH_POINTS {
        let p = GfbmParams::validate(a, g)?;
        for t in [0.5, 1.5] {
            let r = increment_ratio(&p, t, &approach_ladder(t, 14))?;
            worst = worst.max(r.final_deviation);
            rows.push(json!({"alpha": a, "gamma": g, "t": t, "limit": r.limit, "final_deviation": r.final_deviation}));
        }
    }
    Ok(Check {
        passed: worst < 0.01,
        summary: format!("largest relative deviation {worst:.2e} at gap 2^-14 t (limit 1e-2)"),
        details: json!(rows),
    })
}

fn conditional_variance(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut rows = Vec::new();
    for (a, g) in ROUGH_POINTS {
        let engine = slnd_engine(&GfbmParams::validate(a, g)?)?;
        let mut margin = f64::INFINITY;
        let mut bad = 0;
        for _ in 0..200 {
            let b: f64 = rng.random_range(0.5..4.0);
            let t = rng.random_range(0.05 * b..b);
            let s = rng.random_range(0.0..t);
            let k = rng.random_range(0..=64usize);
            let mut cond: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..=s)).collect();
            cond.sort_by(|x, y| x.total_cmp(y));
            cond.dedup();
            let gap = slnd_gap(&engine, &cond, s, t, b)?;
            margin = margin.min((gap.cond_var - gap.bound) / gap.variance);
            if !gap.satisfied(1e-8) {
                bad += 1;
            }
        }
        violations += bad;
        rows.push(
            json!({"alpha": a, "gamma": g, "violations": bad, "smallest_relative_margin": margin}),
        );
    }
    Ok(Check {
        passed: violations == 0,
        summary: format!("{violations} violations in 600 random configurations"),
        details: json!(rows),
    })
}

fn tangent_convergence() -> Result<Check> {
    let p = GfbmParams::validate(0.25, 0.5)?;
    let x = tangent_cov_error(&p, &TangentQuery::standard(1.0, ProcessId::X))?;
    let z = tangent_cov_error(&p, &TangentQuery::standard(1.0, ProcessId::Z))?;
    let shrink = |e: &[f64]| e[0] / e[e.len() - 1];
    let (xs, zs) = (shrink(&x.errors), shrink(&z.errors));
    let (xr, zr) = (
        *x.relative_errors.last().unwrap_or(&f64::NAN),
        *z.relative_errors.last().unwrap_or(&f64::NAN),
    );
    Ok(Check {
        passed: xs >= 10.0 && xr < 0.05,
        summary: format!(
            "X: error shrinks {xs:.2}x from u = 2^-2 to 2^-8, relative error {xr:.2e}; Z: {zs:.1}x, {zr:.2e} (limits 10x, 5%)"
        ),
        details: json!({"x": x.errors, "x_relative": x.relative_errors, "z": z.errors, "z_relative": z.relative_errors}),
    })
}

/// Thresholds on `[0, 1]` for Brownian motion, inside the range where the
/// first series term dominates.
pub const BROWNIAN_EPS: [f64; 7] = [0.6, 0.55, 0.5, 0.46, 0.43, 0.4, 0.38];

fn small_ball(budget: Budget, seed: u64) -> Result<Check> {
    let n_origin = budget.paths(100_000);
    let n_local = budget.paths(20_000);

    let bm = GfbmParams::validate(0.0, 0.0)?;
    let mut q = SmallBallQuery::origin(ProcessId::X, 1.0, BROWNIAN_EPS.to_vec(), n_origin);
    q.seed = seed;
    let est = estimate(&bm, &q)?;
    let bm_fit = fit_exponent(&est, true)?;
    let mut worst_z: f64 = 0.0;
    let mut matches = Vec::new();
    for e in &est.per_eps {
        let exact = brownian_smallball(e.eps);
        let half = 0.5 * (e.corrected_ci_high - e.corrected_ci_low);
        let z = (e.p_corrected - exact).abs() / half;
        worst_z = worst_z.max(z);
        matches.push(json!({"eps": e.eps, "p_corrected": e.p_corrected, "half_width": half, "series": exact}));
    }
    let bm_ok = (bm_fit.fitted_exponent - bm_fit.predicted_exponent).abs() <= 0.2 && worst_z <= 2.0;

    let p = GfbmParams::validate(0.25, 0.5)?;
    let eps = vec![1.0, 0.8, 0.7, 0.6, 0.5, 0.45, 0.4, 0.35, 0.3];
    let mut q = SmallBallQuery::origin(ProcessId::X, 1.0, eps, n_origin);
    q.seed = seed + 1;
    let rough_fit = fit_exponent(&estimate(&p, &q)?, true)?;
    let rough_ok = (rough_fit.fitted_exponent - rough_fit.predicted_exponent).abs() <= 0.2;

    let engine = CovEngine::tabulated(&p, ProcessId::X)?;
    let r: f64 = 2f64.powi(-5);
    let base = r.powf(p.alpha + 0.5);
    let eps: Vec<f64> = [0.9, 0.8, 0.7, 0.6, 0.5, 0.45, 0.4, 0.35, 0.3, 0.25, 0.2]
        .iter()
        .map(|f| f * base)
        .collect();
    let mut runs = Vec::new();
    for (k, t) in [0.5, 1.0, 2.0, 4.0].into_iter().enumerate() {
        let mut q = SmallBallQuery::local(ProcessId::X, t, r, eps.clone(), n_local);
        q.seed = seed + 2 + k as u64;
        runs.push(estimate_with(&engine, &q)?);
    }
    let loc = location_exponent(&runs, true)?;
    let loc_ok = (loc.location_slope - loc.target).abs() <= 0.1;

    Ok(Check {
        passed: bm_ok && rough_ok && loc_ok,
        summary: format!(
            "BM exponent {:.3} (predicted {}), worst series z {:.2} (limit 2); (0.25, 0.5) exponent {:.3} (predicted {:.3}); location slope {:.3} (target {:.3})",
            bm_fit.fitted_exponent,
            bm_fit.predicted_exponent,
            worst_z,
            rough_fit.fitted_exponent,
            rough_fit.predicted_exponent,
            loc.location_slope,
            loc.target
        ),
        details: json!({
            "brownian": {"fit": bm_fit.fitted_exponent, "used_eps": bm_fit.used_eps, "series": matches},
            "rough_origin": {"fit": rough_fit.fitted_exponent, "used_eps": rough_fit.used_eps},
            "local": {"t": loc.t_values, "eps": loc.eps, "slopes": loc.slopes, "slope": loc.location_slope},
        }),
    })
}

fn location_scaling(budget: Budget, seed: u64) -> Result<Check> {
    let n = budget.paths(500);
    let ladder = dyadic_ladder(4, 10);
    let mut ok = true;
    let mut parts = Vec::new();
    let mut rows = Vec::new();
    for (a, g) in [(0.25, 0.5), (0.3, 0.4)] {
        let p = GfbmParams::validate(a, g)?;
        let engine = CovEngine::tabulated(&p, ProcessId::X)?;
        let mut chung = Vec::new();
        let mut lil = Vec::new();
        for (k, t) in [0.5, 1.0, 2.0, 4.0].into_iter().enumerate() {
            let ens = local_ensemble(&engine, t, &ladder, n, seed + k as u64)?;
            chung.push((t, chung_liminf(&ens, t, &ladder)?));
            lil.push((t, lil_limsup(&ens, t, &ladder)?));
        }
        let c = location_regression(&chung, g)?;
        let l = location_regression(&lil, g)?;
        ok &= (c.slope - c.target).abs() <= 0.08 && (l.slope - l.target).abs() <= 0.08;
        parts.push(format!(
            "({a}, {g}): Chung {:.3}, LIL {:.3} (target {:.3})",
            c.slope, l.slope, c.target
        ));
        rows.push(json!({"alpha": a, "gamma": g, "chung": c, "lil": l}));
    }
    Ok(Check {
        passed: ok,
        summary: format!("{} with {n} paths (band 0.08)", parts.join("; ")),
        details: json!(rows),
    })
}

fn brownian_calibration(budget: Budget, seed: u64) -> Result<Check> {
    let bm = GfbmParams::validate(0.0, 0.0)?;
    let b = 2.0 + 2f64.powi(-6);
    let n_points = (b.ln() / (2f64.powi(-15) / b)).ceil() as usize + 1;
    let grid = TimeGrid::geometric(1.0, b, n_points)?;
    let ens = increment_sample(&bm, &grid, ProcessId::X, budget.paths(200), seed)?;
    let modulus = uniform_modulus(&ens, 1.0, 2.0, &dyadic_ladder(6, 10))?;

    let ladder = dyadic_ladder(4, 10);
    let engine = CovEngine::tabulated(&bm, ProcessId::X)?;
    let local = local_ensemble(&engine, 1.0, &ladder, budget.paths(500), seed + 1)?;
    let lil = lil_limsup(&local, 1.0, &ladder)?;

    let dm = modulus.fitted_constant / SQRT_2 - 1.0;
    let dl = lil.fitted_constant / SQRT_2 - 1.0;
    Ok(Check {
        passed: dm.abs() <= 0.15 && dl.abs() <= 0.15,
        summary: format!(
            "modulus constant {:.3} ({:+.1}%), LIL constant {:.3} ({:+.1}%) against sqrt 2 (band 15%)",
            modulus.fitted_constant,
            100.0 * dm,
            lil.fitted_constant,
            100.0 * dl
        ),
        details: json!({"modulus": modulus, "lil": lil}),
    })
}

fn spectral_consistency() -> Result<Check> {
    let p = GfbmParams::validate(0.25, 0.5)?;
    let table = spectral_table(&p)?;
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for tau in [0.0, 0.5, 1.0] {
        let exact = r_u(&p, tau)?;
        let back = table.reconstruct(tau);
        worst = worst.max((exact - back).abs());
        rows.push(json!({"tau": tau, "r_u": exact, "round_trip": back}));
    }
    let ladder: Vec<f64> = (2..=8).map(|k| 2f64.powi(k)).collect();
    let fit = tail_mass_fit(&table, &ladder)?;
    let low = fit.low_exponent - fit.predicted_low;
    let high = fit.high_exponent - fit.predicted_high;
    Ok(Check {
        passed: worst <= 1e-4 && low.abs() <= 0.15 && high.abs() <= 0.15,
        summary: format!(
            "round trip {worst:.2e} (limit 1e-4); tail slopes {:.3} (predicted {}), {:.3} (predicted {}) (band 0.15)",
            fit.low_exponent, fit.predicted_low, fit.high_exponent, fit.predicted_high
        ),
        details: json!({"round_trip": rows, "tail": fit}),
    })
}

fn inversion(budget: Budget, seed: u64) -> Result<Check> {
    let n = budget.paths(20_000);
    let p = GfbmParams::validate(0.3, 0.4)?;
    let grid = TimeGrid::uniform(0.25, 4.0, 16)?;
    let inv = time_invert(&simulate(&p, &grid, ProcessId::X, n, seed)?)?;
    let gram = build_gram(&p, inv.grid(), ProcessId::X)?;
    let z = max_wick_deviation(&inv.sample_cov(), &gram, n);
    Ok(Check {
        passed: z <= WICK_LIMIT,
        summary: format!(
            "largest Wick z-score {z:.2} on the inverted grid, n = {n} (limit {WICK_LIMIT})"
        ),
        details: json!({"max_wick": z, "inverted_grid": inv.times()}),
    })
}

fn regularity_split(budget: Budget, seed: u64) -> Result<Check> {
    let n_interval = budget.paths(200);
    let n_origin = budget.paths(2000);
    let grid = TimeGrid::geometric(1.0, 2.0, 1025)?;
    let (oa, ob) = (2f64.powi(-10), 2f64.powi(-4));
    let origin_grid = TimeGrid::geometric(oa, ob, 256)?;
    let mut ok = true;
    let mut parts = Vec::new();
    let mut rows = Vec::new();
    for (k, (a, g)) in [(0.25, 0.5), (0.3, 0.4)].into_iter().enumerate() {
        let p = GfbmParams::validate(a, g)?;
        let model = CovarianceModel::new(p)?;
        let s = seed + 10 * k as u64;
        let z = levinson_sample(
            &LampertiTable::build(&model, ProcessId::Z)?,
            &grid,
            n_interval,
            s,
        )?;
        let hz = holder_estimate(&z, HolderWindow::Interval { a: 1.0, b: 2.0 })?.exponent;
        let y = levinson_sample(
            &LampertiTable::build(&model, ProcessId::Y)?,
            &grid,
            n_interval,
            s + 1,
        )?;
        let hy = holder_estimate(&y, HolderWindow::Interval { a: 1.0, b: 2.0 })?.exponent;
        let xt = LampertiTable::build(&model, ProcessId::X)?;
        let x = levinson_sample(&xt, &origin_grid, n_origin, s + 2)?;
        let hx = holder_estimate(&x, HolderWindow::Origin { a: oa, b: ob })?.exponent;
        let local = a + 0.5;
        ok &=
            (hz - local).abs() <= 0.05 && (hy - 1.0).abs() <= 0.05 && (hx - p.hurst).abs() <= 0.05;
        parts.push(format!(
            "({a}, {g}): Z {hz:.3}/{local}, Y {hy:.3}/1, X origin {hx:.3}/{:.2}",
            p.hurst
        ));
        rows.push(json!({"alpha": a, "gamma": g, "z": hz, "y": hy, "x_origin": hx, "local_index": local, "hurst": p.hurst}));
    }
    Ok(Check {
        passed: ok,
        summary: format!("{} (band 0.05)", parts.join("; ")),
        details: json!(rows),
    })
}

fn box_dimension(budget: Budget, seed: u64) -> Result<Check> {
    let n = match budget {
        Budget::Full => 20,
        Budget::Fast => 4,
    };
    let grid = TimeGrid::geometric(1.0, 2.0, 1 << 14)?;
    let mut ok = true;
    let mut parts = Vec::new();
    let mut rows = Vec::new();
    for (k, (a, g)) in [(0.0, 0.0), (0.25, 0.5)].into_iter().enumerate() {
        let model = CovarianceModel::new(GfbmParams::validate(a, g)?)?;
        let table = LampertiTable::build(&model, ProcessId::X)?;
        let ens = levinson_sample(&table, &grid, n, seed + k as u64)?;
        let d = ensemble_box_dim(&ens, 1.0, 2.0)?;
        ok &= (d.dimension - d.predicted).abs() <= 0.1;
        parts.push(format!(
            "({a}, {g}): {:.3} (predicted {:.3})",
            d.dimension, d.predicted
        ));
        rows.push(json!({"alpha": a, "gamma": g, "box": d}));
    }
    Ok(Check {
        passed: ok,
        summary: format!("{} over {n} paths (band 0.1)", parts.join("; ")),
        details: json!(rows),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_variance_is_one_for_brownian_motion() {
        assert!((fbm_unit_variance(0.5) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_criteria_pass() {
        for id in [1, 2, 4, 10] {
            let r = run_criterion(id, Budget::Fast, 0).unwrap();
            assert!(r.passed, "{}: {}", r.name, r.summary);
        }
    }

    #[test]
    fn unknown_criterion_is_rejected() {
        assert!(run_criterion(14, Budget::Fast, 0).is_err());
        assert!("medium".parse::<Budget>().is_err());
    }
}
