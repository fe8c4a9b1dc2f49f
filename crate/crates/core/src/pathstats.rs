//! Empirical path statistics over vanishing-scale ladders.
//!
//! Limits in `r -> 0` are replaced by the finite ladder: liminf by the minimum
//! and limsup by the maximum over the ladder. Every report keeps the per-scale
//! aggregates so the trend can be inspected.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::ProcessId;
use crate::error::{DomainError, Error, Result};
use crate::params::{GfbmParams, RegimeKind};
use crate::regression::fit_line;
use crate::simulate::{multiscale_offsets, simulate_increments, CovEngine, PathEnsemble};

/// Scales at or above this are dropped so that `ln ln(1/r) >= ln 2`.
pub const LNLN_CUTOFF: f64 = 0.1353352832366127; // e^{-2}

/// Points per scale and side in [`local_ensemble`].
pub const LOCAL_POINTS_PER_SCALE: usize = 64;

/// Minimum number of lags below the smallest scale for the uniform modulus.
pub const MIN_LAGS: usize = 32;

/// Minimum number of points for box counting.
pub const MIN_BOX_POINTS: usize = 1 << 14;

/// Scales and the window they apply to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderSpec {
    /// Decreasing scales in `(0, 1)`.
    pub r_values: Vec<f64>,
    pub t_center: Option<f64>,
    pub interval: Option<(f64, f64)>,
}

impl LadderSpec {
    pub fn local(r_values: Vec<f64>, t_center: f64) -> Result<Self> {
        let s = Self {
            r_values,
            t_center: Some(t_center),
            interval: None,
        };
        s.check()?;
        Ok(s)
    }

    pub fn uniform(r_values: Vec<f64>, a: f64, b: f64) -> Result<Self> {
        let s = Self {
            r_values,
            t_center: None,
            interval: Some((a, b)),
        };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        let r = &self.r_values;
        if r.is_empty() {
            return Err(DomainError::arg("ladder", "empty ladder").into());
        }
        if r.iter().any(|x| !(*x > 0.0 && *x < 1.0)) {
            return Err(DomainError::arg("ladder", "scales must lie in (0, 1)").into());
        }
        if r.windows(2).any(|w| w[1] >= w[0]) {
            return Err(DomainError::arg("ladder", "scales must be decreasing").into());
        }
        if let Some(t) = self.t_center {
            if !(t > 0.0) || r[0] >= t / 2.0 {
                return Err(DomainError::arg(
                    "ladder",
                    format!("scales must stay below t/2 = {}", t / 2.0),
                )
                .into());
            }
        }
        if let Some((a, b)) = self.interval {
            if !(a > 0.0 && b > a) || r[0] >= b - a {
                return Err(
                    DomainError::arg("ladder", "need 0 < a < b and scales below b - a").into(),
                );
            }
        }
        Ok(())
    }
}

/// `2^{-k}` for `k = k_first..=k_last`.
pub fn dyadic_ladder(k_first: i32, k_last: i32) -> Vec<f64> {
    (k_first..=k_last).map(|k| 2f64.powi(-k)).collect()
}

/// Result of one ladder statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub statistic: String,
    pub r_values: Vec<f64>,
    /// Per-scale mean of the normalized statistic across paths.
    pub per_scale_mean: Vec<f64>,
    pub per_scale_median: Vec<f64>,
    pub per_scale_max: Vec<f64>,
    /// Per-scale mean of the raw (unnormalized) statistic.
    pub per_scale_raw: Vec<f64>,
    /// Headline constant; see `notes` for how it is aggregated.
    pub fitted_constant: f64,
    pub fitted_constant_mean: f64,
    pub fitted_constant_median: f64,
    /// Slope of `ln(mean raw)` against `ln r`, after dividing out the
    /// logarithmic factor of the normalizer where it is not iterated.
    pub fitted_exponent: f64,
    pub prediction_exponent: f64,
    /// Predicted location factor, e.g. `t^{-g/2}`.
    pub prediction_location_factor: f64,
    pub n_paths: usize,
    pub notes: Vec<String>,
}

impl StatReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Flat per-scale table.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,mean,median,max,raw_mean\n");
        for k in 0..self.r_values.len() {
            s.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                self.r_values[k],
                self.per_scale_mean[k],
                self.per_scale_median[k],
                self.per_scale_max[k],
                self.per_scale_raw[k]
            ));
        }
        s
    }
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn lnln(r: f64) -> f64 {
    (1.0 / r).ln().ln()
}

/// Drops scales at or above [`LNLN_CUTOFF`], with a note.
fn clip_ladder(r: &[f64], notes: &mut Vec<String>) -> Result<Vec<f64>> {
    let kept: Vec<f64> = r.iter().copied().filter(|x| *x < LNLN_CUTOFF).collect();
    if kept.len() < r.len() {
        let msg = format!(
            "dropped {} scale(s) >= e^-2 to keep ln ln(1/r) > 0",
            r.len() - kept.len()
        );
        log::info!("{msg}");
        notes.push(msg);
    }
    if kept.is_empty() {
        return Err(DomainError::arg("ladder", "no scale below e^-2").into());
    }
    Ok(kept)
}

/// Local exponent of the ensemble's process and its regime.
fn local_exponent(params: &GfbmParams<f64>, process: ProcessId) -> Result<(f64, RegimeKind)> {
    let kind = params.classify().kind;
    match process {
        ProcessId::Zprime | ProcessId::Yprime => {
            if kind != RegimeKind::Smooth {
                return Err(Error::Regime(
                    "derivative statistics need alpha > 1/2".into(),
                ));
            }
            Ok((params.alpha - 0.5, RegimeKind::Smooth))
        }
        ProcessId::X | ProcessId::Z => match kind {
            RegimeKind::Smooth => Err(Error::Regime(format!(
                "alpha = {} > 1/2: paths are differentiable; use a Z' ensemble",
                params.alpha
            ))),
            RegimeKind::Critical => Ok((1.0, kind)),
            RegimeKind::Rough => Ok((params.alpha + 0.5, kind)),
        },
        other => Err(Error::InvalidInput(format!(
            "no path statistic for {other:?}"
        ))),
    }
}

fn assemble(
    name: &str,
    r: Vec<f64>,
    normalized: &[Vec<f64>],
    raw: &[Vec<f64>],
    per_path: &[f64],
    headline_is_mean: bool,
    log_factor: &dyn Fn(f64) -> f64,
    prediction_exponent: f64,
    location: f64,
    notes: Vec<String>,
) -> StatReport {
    let k = r.len();
    let col = |m: &[Vec<f64>], j: usize| m.iter().map(|row| row[j]).collect::<Vec<f64>>();
    let per_scale_mean: Vec<f64> = (0..k).map(|j| mean(&col(normalized, j))).collect();
    let per_scale_median: Vec<f64> = (0..k).map(|j| median(&col(normalized, j))).collect();
    let per_scale_max: Vec<f64> = (0..k)
        .map(|j| col(normalized, j).into_iter().fold(0.0, f64::max))
        .collect();
    let per_scale_raw: Vec<f64> = (0..k).map(|j| mean(&col(raw, j))).collect();
    let pts: Vec<(f64, f64)> = r
        .iter()
        .zip(&per_scale_raw)
        .filter(|(_, v)| **v > 0.0)
        .map(|(x, v)| (x.ln(), (v / log_factor(*x)).ln()))
        .collect();
    let fitted_exponent = fit_line(&pts).map_or(f64::NAN, |f| f.0);
    let m = mean(per_path);
    let md = median(per_path);
    StatReport {
        statistic: name.into(),
        r_values: r,
        per_scale_mean,
        per_scale_median,
        per_scale_max,
        per_scale_raw,
        fitted_constant: if headline_is_mean { m } else { md },
        fitted_constant_mean: m,
        fitted_constant_median: md,
        fitted_exponent,
        prediction_exponent,
        prediction_location_factor: location,
        n_paths: per_path.len(),
        notes,
    }
}

/// `sup |P(t+h) - P(t)| / w(h)` over `t in [a, b]`, `0 < h <= r`, with
/// `w(h) = h^theta sqrt(ln 1/h)` (rough), `h ln(1/h)` (critical) or
/// `h^{a-1/2} sqrt(ln 1/h)` for derivative ensembles. The headline constant is
/// the mean over paths at the smallest scale.
pub fn uniform_modulus(ens: &PathEnsemble, a: f64, b: f64, ladder: &[f64]) -> Result<StatReport> {
    let spec = LadderSpec::uniform(ladder.to_vec(), a, b)?;
    let (theta, kind) = local_exponent(&ens.meta.params, ens.meta.process)?;
    let mut notes = Vec::new();
    if kind == RegimeKind::Critical {
        notes.push("critical case: only the upper bound of the modulus is established".into());
    }
    let t = ens.times();
    let r_max = spec.r_values[0];
    let r_min = *spec.r_values.last().unwrap();
    let i0 = t.partition_point(|x| *x < a);
    let i1 = t.partition_point(|x| *x <= b);
    let hi = t.partition_point(|x| *x <= b + r_max);
    if i1 <= i0 || t.last().is_none_or(|x| *x < b + r_max * 0.999) {
        return Err(Error::GridTooCoarse(format!(
            "grid must cover [{a}, {}]",
            b + r_max
        )));
    }
    let gap = t[i0..hi]
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0, f64::max);
    if r_min / gap < MIN_LAGS as f64 {
        return Err(Error::GridTooCoarse(format!(
            "only {:.0} lags below the smallest scale {r_min:e}; need {MIN_LAGS}",
            (r_min / gap).floor()
        )));
    }
    // Ascending bin edges; a gap h falls in the first bin with r >= h.
    let mut edges = spec.r_values.clone();
    edges.reverse();
    let k = edges.len();
    let inv_w = |h: f64| -> f64 {
        let l = -h.ln();
        match kind {
            RegimeKind::Critical => 1.0 / (h * l),
            _ => (-theta * h.ln()).exp() / l.sqrt(),
        }
    };
    // Time-major copy so that each pair is weighted once for all paths.
    let np = ens.n_paths();
    let mut cols = vec![0.0; hi * np];
    for p in 0..np {
        for (j, v) in ens.path(p)[..hi].iter().enumerate() {
            cols[j * np + p] = *v;
        }
    }
    let fresh = || (vec![0.0f64; k * np], vec![0.0f64; k * np]);
    let (mut best, mut raw) = (i0..i1)
        .into_par_iter()
        .fold(fresh, |(mut best, mut raw), i| {
            let xi = &cols[i * np..(i + 1) * np];
            let mut bin = 0;
            for j in i + 1..hi {
                let h = t[j] - t[i];
                if h > r_max {
                    break;
                }
                while h > edges[bin] {
                    bin += 1;
                }
                let w = inv_w(h);
                let xj = &cols[j * np..(j + 1) * np];
                let b = &mut best[bin * np..(bin + 1) * np];
                let rw = &mut raw[bin * np..(bin + 1) * np];
                for p in 0..np {
                    let d = (xj[p] - xi[p]).abs();
                    rw[p] = rw[p].max(d);
                    b[p] = b[p].max(d * w);
                }
            }
            (best, raw)
        })
        .reduce(fresh, |(mut b1, mut r1), (b2, r2)| {
            for (x, y) in b1.iter_mut().zip(&b2) {
                *x = x.max(*y);
            }
            for (x, y) in r1.iter_mut().zip(&r2) {
                *x = x.max(*y);
            }
            (b1, r1)
        });
    for bin in 1..k {
        for p in 0..np {
            best[bin * np + p] = best[bin * np + p].max(best[(bin - 1) * np + p]);
            raw[bin * np + p] = raw[bin * np + p].max(raw[(bin - 1) * np + p]);
        }
    }
    // Back to decreasing scales, one row per path.
    let per_path_rows = |m: &[f64]| -> Vec<Vec<f64>> {
        (0..np)
            .map(|p| (0..k).rev().map(|bin| m[bin * np + p]).collect())
            .collect()
    };
    let normalized = per_path_rows(&best);
    let raw = per_path_rows(&raw);
    let last = spec.r_values.len() - 1;
    let per_path: Vec<f64> = normalized.iter().map(|v| v[last]).collect();
    notes.push("fitted_constant: mean over paths at the smallest scale".into());
    Ok(assemble(
        "uniform_modulus",
        spec.r_values,
        &normalized,
        &raw,
        &per_path,
        true,
        &|r: f64| match kind {
            RegimeKind::Critical => (1.0 / r).ln(),
            _ => (1.0 / r).ln().sqrt(),
        },
        theta,
        1.0,
        notes,
    ))
}

/// Per path and scale: `max_{|t_j - t| <= r} |x_j - x(t)|`.
fn local_sups(ens: &PathEnsemble, t_center: f64, r: &[f64]) -> Result<Vec<Vec<f64>>> {
    let t = ens.times();
    let c = ens
        .grid()
        .index_of(t_center)
        .ok_or_else(|| Error::InvalidInput(format!("t_center = {t_center} is not a grid point")))?;
    let r_max = r[0];
    let r_min = *r.last().unwrap();
    if t[0] > t_center - r_max * 0.999 || *t.last().unwrap() < t_center + r_max * 0.999 {
        return Err(Error::GridTooCoarse(format!(
            "window t +- {r_max} is not inside the grid"
        )));
    }
    let lo = t.partition_point(|x| *x < t_center - r_min);
    let hi = t.partition_point(|x| *x <= t_center + r_min);
    let gap = t[lo..hi]
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0, f64::max);
    if gap > r_min / LOCAL_POINTS_PER_SCALE as f64 * 1.0001 {
        return Err(Error::GridTooCoarse(format!(
            "resolution {gap:e} near t exceeds r/{LOCAL_POINTS_PER_SCALE} = {:e}",
            r_min / LOCAL_POINTS_PER_SCALE as f64
        )));
    }
    // Points sorted by distance from the center, then a running max.
    let mut order: Vec<usize> = (0..t.len())
        .filter(|&j| j != c && (t[j] - t_center).abs() <= r_max)
        .collect();
    order.sort_by(|&i, &j| (t[i] - t_center).abs().total_cmp(&(t[j] - t_center).abs()));
    let dist: Vec<f64> = order.iter().map(|&j| (t[j] - t_center).abs()).collect();
    let cut: Vec<usize> = r
        .iter()
        .map(|x| dist.partition_point(|d| *d <= *x))
        .collect();
    Ok((0..ens.n_paths())
        .into_par_iter()
        .map(|p| {
            let x = ens.path(p);
            let x0 = x[c];
            let mut run = Vec::with_capacity(order.len());
            let mut m = 0.0f64;
            for &j in &order {
                m = m.max((x[j] - x0).abs());
                run.push(m);
            }
            cut.iter()
                .map(|&n| if n == 0 { 0.0 } else { run[n - 1] })
                .collect()
        })
        .collect())
}

/// Local statistic shared by [`chung_liminf`] and [`lil_limsup`].
fn local_stat(
    ens: &PathEnsemble,
    t_center: f64,
    ladder: &[f64],
    chung: bool,
) -> Result<StatReport> {
    let params = ens.meta.params;
    let (theta, kind) = local_exponent(&params, ens.meta.process)?;
    if chung && kind == RegimeKind::Critical {
        return Err(Error::Regime(
            "Chung's law is not available at alpha = 1/2".into(),
        ));
    }
    let mut notes = Vec::new();
    let r = clip_ladder(ladder, &mut notes)?;
    let spec = LadderSpec::local(r, t_center)?;
    let r = spec.r_values;
    let sups = local_sups(ens, t_center, &r)?;
    let denom: Vec<f64> = r
        .iter()
        .map(|&x| {
            let ll = lnln(x);
            if chung {
                (x / ll).powf(theta)
            } else if kind == RegimeKind::Critical {
                x * ((1.0 / x).ln() * ll).sqrt()
            } else {
                x.powf(theta) * ll.sqrt()
            }
        })
        .collect();
    let normalized: Vec<Vec<f64>> = sups
        .iter()
        .map(|s| s.iter().zip(&denom).map(|(v, d)| v / d).collect())
        .collect();
    let per_path: Vec<f64> = normalized
        .iter()
        .map(|v| {
            if chung {
                v.iter().cloned().fold(f64::INFINITY, f64::min)
            } else {
                v.iter().cloned().fold(0.0, f64::max)
            }
        })
        .collect();
    notes.push(format!(
        "fitted_constant: median over paths of the per-path {} over the ladder",
        if chung { "minimum" } else { "maximum" }
    ));
    let location = t_center.powf(-params.gamma / 2.0);
    Ok(assemble(
        if chung { "chung_liminf" } else { "lil_limsup" },
        r,
        &normalized,
        &sups,
        &per_path,
        false,
        &|_| 1.0,
        theta,
        location,
        notes,
    ))
}

/// `min_r sup_{|h|<=r} |P(t+h) - P(t)| / (r / ln ln(1/r))^theta` per path.
pub fn chung_liminf(ens: &PathEnsemble, t_center: f64, ladder: &[f64]) -> Result<StatReport> {
    local_stat(ens, t_center, ladder, true)
}

/// `max_r sup_{|h|<=r} |P(t+h) - P(t)| / (r^theta sqrt(ln ln(1/r)))` per path,
/// with `r sqrt(ln(1/r) ln ln(1/r))` at `alpha = 1/2`.
pub fn lil_limsup(ens: &PathEnsemble, t_center: f64, ladder: &[f64]) -> Result<StatReport> {
    local_stat(ens, t_center, ladder, false)
}

/// `max_r |X(r)| / (r^H sqrt(ln ln(1/r)))` per path, using the grid point
/// nearest to each `r`. The fitted exponent regresses the mean of
/// `sup_{s <= r} |X(s)|` on `r`.
pub fn lil_origin(ens: &PathEnsemble, ladder: &[f64]) -> Result<StatReport> {
    let mut notes = Vec::new();
    let r = clip_ladder(ladder, &mut notes)?;
    LadderSpec {
        r_values: r.clone(),
        t_center: None,
        interval: None,
    }
    .check()?;
    let t = ens.times();
    let h = ens.meta.params.hurst;
    let idx: Vec<usize> = r.iter().map(|x| ens.grid().nearest(*x)).collect();
    for (x, &i) in r.iter().zip(&idx) {
        if (t[i] - x).abs() > 0.01 * x {
            return Err(Error::GridTooCoarse(format!(
                "no grid point within 1% of r = {x:e}"
            )));
        }
    }
    let first = t.partition_point(|x| *x <= 0.0);
    if first >= t.len() || t[first] > 0.01 * r.last().unwrap() {
        return Err(Error::GridTooCoarse(
            "grid must refine well below the smallest scale".into(),
        ));
    }
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..ens.n_paths())
        .into_par_iter()
        .map(|p| {
            let x = ens.path(p);
            let norm = r
                .iter()
                .zip(&idx)
                .map(|(rv, &i)| x[i].abs() / (t[i].powf(h) * lnln(*rv).sqrt()))
                .collect();
            let raw = idx
                .iter()
                .map(|&i| x[..=i].iter().fold(0.0f64, |m, v| m.max(v.abs())))
                .collect();
            (norm, raw)
        })
        .collect();
    let normalized: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
    let raw: Vec<Vec<f64>> = rows.iter().map(|r| r.1.clone()).collect();
    let per_path: Vec<f64> = normalized
        .iter()
        .map(|v| v.iter().cloned().fold(0.0, f64::max))
        .collect();
    notes.push("fitted_constant: median over paths of the per-path maximum over the ladder".into());
    Ok(assemble(
        "lil_origin",
        r,
        &normalized,
        &raw,
        &per_path,
        false,
        &|_| 1.0,
        h,
        1.0,
        notes,
    ))
}

/// Location regression of fitted constants against the window center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationFit {
    pub t_values: Vec<f64>,
    pub constants: Vec<f64>,
    /// Slope of `ln constant` against `ln t`.
    pub slope: f64,
    pub intercept: f64,
    /// `-g/2`.
    pub target: f64,
}

pub fn location_regression(reports: &[(f64, StatReport)], gamma: f64) -> Result<LocationFit> {
    let pts: Vec<(f64, f64)> = reports
        .iter()
        .map(|(t, r)| (t.ln(), r.fitted_constant.ln()))
        .collect();
    let (slope, intercept) = fit_line(&pts).ok_or_else(|| {
        Error::InsufficientData(
            "location regression needs two distinct t with positive constants".into(),
        )
    })?;
    Ok(LocationFit {
        t_values: reports.iter().map(|r| r.0).collect(),
        constants: reports.iter().map(|r| r.1.fitted_constant).collect(),
        slope,
        intercept,
        target: -gamma / 2.0,
    })
}

/// Paths of `X(t + h) - X(t)` on the multiscale window of `ladder`.
pub fn local_ensemble(
    engine: &CovEngine,
    t_center: f64,
    ladder: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    LadderSpec::local(ladder.to_vec(), t_center)?;
    let offsets = multiscale_offsets(ladder, LOCAL_POINTS_PER_SCALE);
    simulate_increments(engine, t_center, &offsets, n_paths, seed)
}

/// Where the variogram is taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HolderWindow {
    /// Increments `P(t + h) - P(t)` with both ends in `[a, b]`.
    Interval { a: f64, b: f64 },
    /// `P(r) - P(0)` for `r` in `[a, b]`.
    Origin { a: f64, b: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderEstimate {
    pub exponent: f64,
    pub lags: Vec<f64>,
    pub variogram: Vec<f64>,
    pub window: HolderWindow,
}

/// Half the slope of `ln E|increment|^2` against `ln h` over two decades of lags.
pub fn holder_estimate(ens: &PathEnsemble, window: HolderWindow) -> Result<HolderEstimate> {
    let t = ens.times();
    let n = ens.n_paths();
    if n == 0 {
        return Err(Error::InsufficientData("empty ensemble".into()));
    }
    let (lags, vario) = match window {
        HolderWindow::Interval { a, b } => {
            let i0 = t.partition_point(|x| *x < a);
            let i1 = t.partition_point(|x| *x <= b);
            if i1 < i0 + 101 {
                return Err(Error::GridTooCoarse(format!(
                    "{} points in [{a}, {b}]; two decades of lags need 101",
                    i1.saturating_sub(i0)
                )));
            }
            let mut ls: Vec<usize> = (0..=20)
                .map(|k| 10f64.powf(k as f64 / 10.0).round() as usize)
                .collect();
            ls.dedup();
            let mut lags = Vec::new();
            let mut vario = Vec::new();
            for &l in &ls {
                let pairs = i1 - i0 - l;
                let h = (i0..i0 + pairs).map(|i| t[i + l] - t[i]).sum::<f64>() / pairs as f64;
                let s: f64 = (0..n)
                    .into_par_iter()
                    .map(|p| {
                        let x = ens.path(p);
                        (i0..i0 + pairs)
                            .map(|i| (x[i + l] - x[i]).powi(2))
                            .sum::<f64>()
                    })
                    .sum();
                lags.push(h);
                vario.push(s / (n * pairs) as f64);
            }
            (lags, vario)
        }
        HolderWindow::Origin { a, b } => {
            let zero = ens.grid().index_of(0.0);
            let i0 = t.partition_point(|x| *x < a);
            let i1 = t.partition_point(|x| *x <= b);
            if i1 < i0 + 4 || b / a < 10.0 {
                return Err(Error::GridTooCoarse(format!(
                    "origin window [{a}, {b}] needs >= 4 points and a decade of scales"
                )));
            }
            let lags: Vec<f64> = t[i0..i1].to_vec();
            let vario = (i0..i1)
                .map(|i| {
                    (0..n)
                        .map(|p| {
                            let x = ens.path(p);
                            (x[i] - zero.map_or(0.0, |z| x[z])).powi(2)
                        })
                        .sum::<f64>()
                        / n as f64
                })
                .collect();
            (lags, vario)
        }
    };
    let pts: Vec<(f64, f64)> = lags
        .iter()
        .zip(&vario)
        .filter(|(_, v)| **v > 0.0)
        .map(|(h, v)| (h.ln(), v.ln()))
        .collect();
    let (slope, _) =
        fit_line(&pts).ok_or_else(|| Error::InsufficientData("degenerate variogram".into()))?;
    Ok(HolderEstimate {
        exponent: slope / 2.0,
        lags,
        variogram: vario,
        window,
    })
}

/// Box-counting estimate for one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDimension {
    pub dimension: f64,
    pub box_sizes: Vec<f64>,
    pub counts: Vec<f64>,
    /// Predicted value `(3 - a)/2`, recorded for comparison.
    pub predicted: f64,
}

/// Points per column at the finest box size.
pub const MIN_COLUMN_POINTS: usize = 32;

/// Vertical range at the coarsest box size, in box heights.
pub const COARSE_BOX_HEIGHTS: f64 = 64.0;

/// Box count of `x` over columns of width `d`, each column extended by the
/// first point of the next so the graph stays connected.
fn box_count(t: &[f64], x: &[f64], a: f64, b: f64, d: f64) -> (f64, f64) {
    let ncol = ((b - a) / d).round() as usize;
    let mut lo = vec![f64::INFINITY; ncol];
    let mut hi = vec![f64::NEG_INFINITY; ncol];
    let col = |ti: f64| (((ti - a) / d) as usize).min(ncol - 1);
    for (k, (ti, xi)) in t.iter().zip(x).enumerate() {
        let c = col(*ti);
        lo[c] = lo[c].min(*xi);
        hi[c] = hi[c].max(*xi);
        if k > 0 {
            let cp = col(t[k - 1]);
            if cp != c {
                lo[cp] = lo[cp].min(*xi);
                hi[cp] = hi[cp].max(*xi);
            }
        }
    }
    let used = lo.iter().zip(&hi).filter(|(l, _)| l.is_finite());
    let count = used
        .clone()
        .map(|(l, h)| (h / d).floor() - (l / d).floor() + 1.0)
        .sum();
    let mean_range = used.clone().map(|(l, h)| h - l).sum::<f64>() / used.count() as f64;
    (count, mean_range)
}

/// Graph box-counting dimension over `[a, b]`.
///
/// Box sizes run from `(b - a)/8` down by halving while each column keeps at
/// least [`MIN_COLUMN_POINTS`] grid points. Box dimension is unchanged by a
/// vertical rescaling, so values are first scaled until the mean column range
/// at the coarsest size spans [`COARSE_BOX_HEIGHTS`] boxes; otherwise the one
/// box every column needs regardless of its range flattens the coarse end.
pub fn graph_box_dim(
    params: &GfbmParams<f64>,
    times: &[f64],
    path: &[f64],
    a: f64,
    b: f64,
) -> Result<BoxDimension> {
    if params.alpha >= 0.5 {
        return Err(Error::Regime(
            "box dimension is tested in the rough regime".into(),
        ));
    }
    if times.len() != path.len() {
        return Err(Error::InvalidInput(
            "times and values differ in length".into(),
        ));
    }
    let i0 = times.partition_point(|x| *x < a);
    let i1 = times.partition_point(|x| *x <= b);
    let npts = i1.saturating_sub(i0);
    if npts < MIN_BOX_POINTS {
        return Err(Error::GridTooCoarse(format!(
            "{npts} points in [{a}, {b}]; need {MIN_BOX_POINTS}"
        )));
    }
    let t = &times[i0..i1];
    let gap = t.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let mut sizes = Vec::new();
    let mut delta = (b - a) / 8.0;
    while delta >= MIN_COLUMN_POINTS as f64 * gap {
        sizes.push(delta);
        delta /= 2.0;
    }
    if sizes.len() < 4 {
        return Err(Error::GridTooCoarse("fewer than four box sizes".into()));
    }
    let (_, coarse_range) = box_count(t, &path[i0..i1], a, b, sizes[0]);
    if !(coarse_range > 0.0) {
        return Err(Error::InsufficientData(
            "path is constant on the interval".into(),
        ));
    }
    let scale = COARSE_BOX_HEIGHTS * sizes[0] / coarse_range;
    let x: Vec<f64> = path[i0..i1].iter().map(|v| v * scale).collect();
    let counts: Vec<f64> = sizes.iter().map(|&d| box_count(t, &x, a, b, d).0).collect();
    let pts: Vec<(f64, f64)> = sizes
        .iter()
        .zip(&counts)
        .map(|(d, c)| ((1.0 / d).ln(), c.ln()))
        .collect();
    let (dimension, _) =
        fit_line(&pts).ok_or_else(|| Error::InsufficientData("degenerate box counts".into()))?;
    Ok(BoxDimension {
        dimension,
        box_sizes: sizes,
        counts,
        predicted: (3.0 - params.alpha) / 2.0,
    })
}

/// Mean box dimension over the paths of an ensemble.
pub fn ensemble_box_dim(ens: &PathEnsemble, a: f64, b: f64) -> Result<BoxDimension> {
    let per = (0..ens.n_paths())
        .into_par_iter()
        .map(|p| graph_box_dim(&ens.meta.params, ens.times(), ens.path(p), a, b))
        .collect::<Result<Vec<_>>>()?;
    let first = per
        .first()
        .ok_or_else(|| Error::InsufficientData("empty ensemble".into()))?;
    let k = first.counts.len();
    let counts = (0..k)
        .map(|j| mean(&per.iter().map(|d| d.counts[j]).collect::<Vec<_>>()))
        .collect();
    Ok(BoxDimension {
        dimension: mean(&per.iter().map(|d| d.dimension).collect::<Vec<_>>()),
        box_sizes: first.box_sizes.clone(),
        counts,
        predicted: first.predicted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::CovarianceModel;
    use crate::lamperti::LampertiTable;
    use crate::simulate::{increment_sample, levinson_sample, TimeGrid};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params(a: f64, g: f64) -> GfbmParams<f64> {
        GfbmParams::validate(a, g).unwrap()
    }

    fn local(a: f64, g: f64, t: f64, n: usize) -> PathEnsemble {
        let eng = CovEngine::tabulated(&params(a, g), ProcessId::X).unwrap();
        local_ensemble(&eng, t, &dyadic_ladder(4, 7), n, 5).unwrap()
    }

    fn brownian_on(a: f64, b: f64, n_points: usize, n_paths: usize) -> PathEnsemble {
        let g = TimeGrid::geometric(a, b, n_points).unwrap();
        increment_sample(&params(0.0, 0.0), &g, ProcessId::X, n_paths, 11).unwrap()
    }

    #[test]
    fn ladder_validation() {
        assert!(LadderSpec::local(vec![], 1.0).is_err());
        assert!(LadderSpec::local(vec![0.01, 0.1], 1.0).is_err());
        assert!(LadderSpec::local(vec![0.6, 0.1], 1.0).is_err());
        assert!(LadderSpec::uniform(vec![0.1, 0.01], 1.0, 2.0).is_ok());
        assert_eq!(dyadic_ladder(1, 3), vec![0.5, 0.25, 0.125]);
        let e = local(0.25, 0.5, 1.0, 4);
        assert!(chung_liminf(&e, 1.0, &[]).is_err());
        assert!(lil_limsup(&e, 1.0, &[0.3]).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn chung_is_excluded_at_the_critical_point() {
        let p = params(0.5, 0.2);
        let eng = CovEngine::tabulated(&p, ProcessId::X).unwrap();
        let e = local_ensemble(&eng, 1.0, &dyadic_ladder(4, 6), 4, 1).unwrap();
        assert!(matches!(
            chung_liminf(&e, 1.0, &dyadic_ladder(4, 6)),
            Err(Error::Regime(_))
        ));
        let l = lil_limsup(&e, 1.0, &dyadic_ladder(4, 6)).unwrap();
        // Normalizer r sqrt(ln(1/r) ln ln(1/r)).
        for (k, r) in l.r_values.iter().enumerate() {
            let d = r * ((1.0 / r).ln() * (1.0 / r).ln().ln()).sqrt();
            let sups = local_sups(&e, 1.0, &l.r_values).unwrap();
            let m = sups.iter().map(|s| s[k] / d).sum::<f64>() / 4.0;
            assert_relative_eq!(m, l.per_scale_mean[k], max_relative = 1e-12);
        }
    }

    #[test]
    fn smooth_paths_need_derivative_ensembles() {
        let p = params(0.7, 0.6);
        let eng = CovEngine::tabulated(&p, ProcessId::X).unwrap();
        let e = local_ensemble(&eng, 1.0, &dyadic_ladder(4, 5), 2, 1).unwrap();
        assert!(matches!(
            lil_limsup(&e, 1.0, &dyadic_ladder(4, 5)),
            Err(Error::Regime(_))
        ));
    }

    #[test]
    fn sups_grow_with_the_scale() {
        let e = local(0.25, 0.5, 1.0, 20);
        let r = dyadic_ladder(4, 7);
        for row in local_sups(&e, 1.0, &r).unwrap() {
            assert!(row.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn scale_equivariance_and_determinism() {
        let e = local(0.25, 0.5, 1.0, 40);
        let r = dyadic_ladder(4, 7);
        let a = chung_liminf(&e, 1.0, &r).unwrap();
        let b = chung_liminf(&e.scaled(3.0), 1.0, &r).unwrap();
        assert_relative_eq!(
            b.fitted_constant,
            3.0 * a.fitted_constant,
            max_relative = 1e-12
        );
        assert_relative_eq!(b.fitted_exponent, a.fitted_exponent, epsilon = 1e-12);
        let l = lil_limsup(&e, 1.0, &r).unwrap();
        let l3 = lil_limsup(&e.scaled(3.0), 1.0, &r).unwrap();
        assert_relative_eq!(
            l3.fitted_constant_mean,
            3.0 * l.fitted_constant_mean,
            max_relative = 1e-12
        );
        assert_eq!(l, lil_limsup(&e, 1.0, &r).unwrap());
        let w = brownian_on(1.0, 1.2, 4097, 6);
        let m = uniform_modulus(&w, 1.0, 1.1, &dyadic_ladder(4, 7)).unwrap();
        let m3 = uniform_modulus(&w.scaled(3.0), 1.0, 1.1, &dyadic_ladder(4, 7)).unwrap();
        assert_relative_eq!(
            m3.fitted_constant,
            3.0 * m.fitted_constant,
            max_relative = 1e-12
        );
        assert_relative_eq!(m3.fitted_exponent, m.fitted_exponent, epsilon = 1e-12);
        assert!(m.per_scale_max.windows(2).all(|v| v[0] >= v[1]));
    }

    #[test]
    fn lnln_guard_clips_large_scales() {
        let eng = CovEngine::tabulated(&params(0.0, 0.0), ProcessId::X).unwrap();
        let e = local_ensemble(&eng, 1.0, &[0.2, 0.1, 0.05], 4, 2).unwrap();
        let rep = lil_limsup(&e, 1.0, &[0.2, 0.1, 0.05]).unwrap();
        assert_eq!(rep.r_values, vec![0.1, 0.05]);
        assert!(rep.notes.iter().any(|n| n.contains("dropped 1")));
    }

    #[test]
    fn coarse_grids_are_rejected() {
        let w = brownian_on(1.0, 1.2, 257, 2);
        assert!(matches!(
            uniform_modulus(&w, 1.0, 1.1, &dyadic_ladder(4, 7)),
            Err(Error::GridTooCoarse(_))
        ));
        let eng = CovEngine::tabulated(&params(0.0, 0.0), ProcessId::X).unwrap();
        let e = local_ensemble(&eng, 1.0, &dyadic_ladder(4, 5), 2, 2).unwrap();
        assert!(matches!(
            chung_liminf(&e, 1.0, &dyadic_ladder(4, 7)),
            Err(Error::GridTooCoarse(_))
        ));
        assert!(holder_estimate(&w, HolderWindow::Interval { a: 1.0, b: 1.01 }).is_err());
    }

    #[test]
    fn brownian_variogram_and_box_dimension() {
        let w = brownian_on(1.0, 2.0, 1025, 100);
        let h = holder_estimate(&w, HolderWindow::Interval { a: 1.0, b: 2.0 }).unwrap();
        assert!((h.exponent - 0.5).abs() < 0.03, "{}", h.exponent);
        let w = brownian_on(1.0, 2.0, 1 << 14, 2);
        let d = ensemble_box_dim(&w, 1.0, 2.0).unwrap();
        assert!((d.dimension - 1.5).abs() < 0.1, "{}", d.dimension);
        assert_eq!(d.predicted, 1.5);
        let few = brownian_on(1.0, 2.0, 1 << 12, 1);
        assert!(graph_box_dim(&few.meta.params, few.times(), few.path(0), 1.0, 2.0).is_err());
    }

    #[test]
    fn origin_statistics() {
        let m = CovarianceModel::new(params(0.3, 0.4)).unwrap();
        let tab = LampertiTable::build(&m, ProcessId::X).unwrap();
        let g = TimeGrid::geometric(2f64.powi(-24), 0.1, 1024).unwrap();
        let e = levinson_sample(&tab, &g, 200, 4).unwrap();
        let l = lil_origin(&e, &dyadic_ladder(4, 16)).unwrap();
        assert!(
            (l.fitted_exponent - 0.6).abs() < 0.05,
            "{}",
            l.fitted_exponent
        );
        let h = holder_estimate(
            &e,
            HolderWindow::Origin {
                a: 2f64.powi(-10),
                b: 2f64.powi(-4),
            },
        )
        .unwrap();
        assert!((h.exponent - 0.6).abs() < 0.05, "{}", h.exponent);
        assert!(lil_origin(&e, &dyadic_ladder(4, 30)).is_err());
    }

    #[test]
    fn report_formats() {
        let e = local(0.25, 0.5, 1.0, 4);
        let rep = lil_limsup(&e, 1.0, &dyadic_ladder(4, 7)).unwrap();
        let back: StatReport = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
        assert_eq!(back, rep);
        let csv = rep.to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("r,mean,median,max,raw_mean"));
    }

    #[test]
    fn location_regression_recovers_power() {
        let mk = |t: f64| {
            let e = local(0.25, 0.5, 1.0, 2);
            let mut r = lil_limsup(&e, 1.0, &dyadic_ladder(4, 7)).unwrap();
            r.fitted_constant = 2.0 * t.powf(-0.25);
            (t, r)
        };
        let fit = location_regression(&[mk(0.5), mk(1.0), mk(4.0)], 0.5).unwrap();
        assert_relative_eq!(fit.slope, -0.25, epsilon = 1e-12);
        assert_eq!(fit.target, -0.25);
        assert!(location_regression(&[mk(1.0)], 0.5).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn modulus_is_equivariant(c in 0.1f64..10.0, seed in 0u64..100) {
            let g = TimeGrid::geometric(1.0, 1.2, 2049).unwrap();
            let w = increment_sample(&params(0.0, 0.0), &g, ProcessId::X, 2, seed).unwrap();
            let a = uniform_modulus(&w, 1.0, 1.1, &dyadic_ladder(4, 6)).unwrap();
            let b = uniform_modulus(&w.scaled(c), 1.0, 1.1, &dyadic_ladder(4, 6)).unwrap();
            prop_assert!((b.fitted_constant / a.fitted_constant - c).abs() < 1e-10 * c);
            for (x, y) in a.per_scale_max.iter().zip(a.per_scale_max.iter().skip(1)) {
                prop_assert!(x >= y);
            }
        }
    }
}
