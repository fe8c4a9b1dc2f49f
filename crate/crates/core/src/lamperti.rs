//! Stationary Lamperti transforms of the self-similar processes.
//!
//! For a process `P` with self-similarity index `H`, `V(s) = e^{-sH} P(e^s)` is
//! stationary with covariance `r(tau) = e^{-|tau| H} cov_P(1, e^{|tau|})`. With
//! `P = Z` this is the process `U`, whose spectral density is tabulated here.
//!
//! [`LampertiTable`] stores the structure function `S(tau) = r(0) - r(tau)` as
//! piecewise Chebyshev interpolants: geometric panels near 0, where `S` has the
//! non-analytic leading term `|tau|^{2a+1}`, and unit-scale panels beyond.
//! Gram matrices on geometric grids, the Levinson sampler and the cosine
//! transform all read from the table.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{CovEvaluation, CovarianceModel, ProcessId};
use crate::error::{DomainError, Error, Result};
use crate::params::GfbmParams;
use crate::quadrature::{gauss_legendre, QuadConfig};
use crate::scalar::Real;

/// Lower end of the frequency range on which the tail diagnostics are fitted.
pub const TAIL_U0: f64 = 4.0;

fn check_self_similar(process: ProcessId) -> Result<()> {
    match process {
        ProcessId::X | ProcessId::Y | ProcessId::Z | ProcessId::U => Ok(()),
        other => Err(Error::InvalidInput(format!(
            "no Lamperti table for {other:?}; supported: X, Y, Z, U"
        ))),
    }
}

/// `r_U(tau) = e^{-|tau| H} cov_z(1, e^{|tau|})`.
pub fn r_u_with<T: Real>(model: &CovarianceModel<T>, tau: T) -> Result<CovEvaluation<T>> {
    let tau = tau.abs();
    let c = model.cov_z(T::one(), tau.exp())?;
    let w = (-tau * model.params.hurst).exp();
    Ok(c.scale(w))
}

pub fn r_u<T: Real>(params: &GfbmParams<T>, tau: T) -> Result<T> {
    Ok(r_u_with(&CovarianceModel::new(*params)?, tau)?.value)
}

/// Stationary covariance of the Lamperti transform of `process`.
pub fn lamperti_cov<T: Real>(
    model: &CovarianceModel<T>,
    process: ProcessId,
    tau: T,
) -> Result<CovEvaluation<T>> {
    check_self_similar(process)?;
    let tau = tau.abs();
    let far = tau.exp();
    let c = match process {
        ProcessId::X => model.cov_x_direct(T::one(), far)?,
        ProcessId::Y => model.cov_y(T::one(), far)?,
        _ => model.cov_z(T::one(), far)?,
    };
    Ok(c.scale((-tau * model.params.hurst).exp()))
}

/// `S(tau) = r(0) - r(tau)`, half the increment variance of the stationary process.
///
/// Below `|tau| = 1` it is assembled from the increment variance of `process`,
/// which keeps its relative accuracy as `tau -> 0`.
pub fn lamperti_structure<T: Real>(
    model: &CovarianceModel<T>,
    process: ProcessId,
    tau: T,
) -> Result<CovEvaluation<T>> {
    check_self_similar(process)?;
    let tau = tau.abs();
    if tau == T::zero() {
        return Ok(CovEvaluation::zero());
    }
    let r0 = model.unit_variance(process)?;
    let h = model.params.hurst;
    if tau < T::one() {
        let p = if process == ProcessId::U {
            ProcessId::Z
        } else {
            process
        };
        let d = model.increment_step(p, T::one(), tau.exp_m1())?;
        let sh = (tau * h * T::c(0.5)).sinh();
        let base = -T::c(2.0) * r0 * sh * sh;
        Ok(CovEvaluation::exact(base).combine(d.scale((-tau * h).exp() * T::c(0.5)), T::one()))
    } else {
        let r = lamperti_cov(model, process, tau)?;
        Ok(CovEvaluation::exact(r0).combine(r, -T::one()))
    }
}

const CHEB_N: usize = 16;

/// Chebyshev interpolant of degree `CHEB_N - 1` on `[a, b]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChebPanel {
    a: f64,
    b: f64,
    coeffs: Vec<f64>,
}

impl ChebPanel {
    fn fit(a: f64, b: f64, f: &(dyn Fn(f64) -> Result<f64> + Sync)) -> Result<Self> {
        let n = CHEB_N;
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        let theta = |k: usize| std::f64::consts::PI * (k as f64 + 0.5) / n as f64;
        let values = (0..n)
            .into_par_iter()
            .map(|k| f(mid + half * theta(k).cos()))
            .collect::<Result<Vec<_>>>()?;
        let mut coeffs = vec![0.0; n];
        for (j, c) in coeffs.iter_mut().enumerate() {
            let s: f64 = values
                .iter()
                .enumerate()
                .map(|(k, v)| v * (j as f64 * theta(k)).cos())
                .sum();
            *c = 2.0 * s / n as f64;
        }
        coeffs[0] *= 0.5;
        Ok(Self { a, b, coeffs })
    }

    fn x(&self, tau: f64) -> f64 {
        (2.0 * tau - self.a - self.b) / (self.b - self.a)
    }

    fn eval(&self, tau: f64) -> f64 {
        clenshaw(&self.coeffs, self.x(tau))
    }

    /// Derivatives `p^{(k)}` at both ends, `k = 0..CHEB_N`.
    fn end_derivatives(&self) -> (Vec<f64>, Vec<f64>) {
        let scale = 2.0 / (self.b - self.a);
        let mut c = self.coeffs.clone();
        let mut at_a = Vec::with_capacity(c.len());
        let mut at_b = Vec::with_capacity(c.len());
        let mut factor = 1.0;
        while !c.is_empty() {
            let plus: f64 = c.iter().sum();
            let minus: f64 = c
                .iter()
                .enumerate()
                .map(|(j, v)| if j % 2 == 0 { *v } else { -v })
                .sum();
            at_a.push(minus * factor);
            at_b.push(plus * factor);
            c = cheb_derivative(&c);
            factor *= scale;
        }
        (at_a, at_b)
    }
}

fn clenshaw(c: &[f64], x: f64) -> f64 {
    let (mut b1, mut b2) = (0.0, 0.0);
    for &ck in c.iter().skip(1).rev() {
        let b0 = ck + 2.0 * x * b1 - b2;
        b2 = b1;
        b1 = b0;
    }
    c[0] + x * b1 - b2
}

fn cheb_derivative(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    if n <= 1 {
        return Vec::new();
    }
    let mut d = vec![0.0; n + 1];
    for k in (1..n).rev() {
        d[k - 1] = d[k + 1] + 2.0 * k as f64 * c[k];
    }
    d[0] *= 0.5;
    d.truncate(n - 1);
    d
}

fn gl20() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(20))
}

/// Build settings for [`LampertiTable`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableOptions {
    /// Smallest tabulated lag; below it `S` is evaluated directly.
    pub tau_lo: f64,
    /// Hard cap on the tabulated range.
    pub tau_max: f64,
    /// Relative interpolation tolerance.
    pub rel_tol: f64,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self {
            tau_lo: 2f64.powi(-36),
            tau_max: 400.0,
            rel_tol: 1e-10,
        }
    }
}

/// Tabulated stationary covariance of a Lamperti transform.
#[derive(Debug, Clone)]
pub struct LampertiTable {
    pub process: ProcessId,
    pub hurst: f64,
    /// `r(0)`.
    pub r0: f64,
    pub tau_lo: f64,
    /// End of the tabulated range; `r` is extrapolated exponentially beyond it.
    pub tau_hi: f64,
    /// Exponential decay rate of `r` fitted at the end of the table.
    pub decay_rate: f64,
    /// Largest interpolation error of `S` seen at the check points.
    pub max_error: f64,
    /// Whether `tau_max` was reached before `r` decayed below `1e-13 r(0)`.
    pub truncated: bool,
    panels: Vec<ChebPanel>,
    model: CovarianceModel<f64>,
}

impl LampertiTable {
    pub fn build(model: &CovarianceModel<f64>, process: ProcessId) -> Result<Self> {
        Self::build_with(model, process, TableOptions::default())
    }

    pub fn build_with(
        model: &CovarianceModel<f64>,
        process: ProcessId,
        opts: TableOptions,
    ) -> Result<Self> {
        check_self_similar(process)?;
        if !(opts.tau_lo > 0.0 && opts.tau_lo < 0.5 && opts.tau_max > 2.0 && opts.rel_tol > 0.0) {
            return Err(Error::InvalidInput(format!("bad table options {opts:?}")));
        }
        let fine = CovarianceModel::with_config(model.params, QuadConfig::new(1e-14, 1e-12))?;
        let r0 = fine.unit_variance(process)?;
        let s = |tau: f64| -> Result<f64> { Ok(lamperti_structure(&fine, process, tau)?.value) };
        let abs_floor = 1e-16 * r0.abs();
        let mut panels = Vec::new();
        let mut max_error: f64 = 0.0;
        let mut fit = |a: f64, b: f64, panels: &mut Vec<ChebPanel>| -> Result<f64> {
            let mut stack = vec![(a, b, 0usize)];
            let mut worst: f64 = 0.0;
            let mut out = Vec::new();
            while let Some((a, b, depth)) = stack.pop() {
                let p = ChebPanel::fit(a, b, &s)?;
                let mut err: f64 = 0.0;
                let mut scale: f64 = 0.0;
                for f in [0.1, 0.5, 0.9] {
                    let tau = a + f * (b - a);
                    let v = s(tau)?;
                    err = err.max((p.eval(tau) - v).abs());
                    scale = scale.max(v.abs());
                }
                if err > opts.rel_tol * scale + abs_floor && depth < 10 {
                    let m = 0.5 * (a + b);
                    stack.push((m, b, depth + 1));
                    stack.push((a, m, depth + 1));
                } else {
                    worst = worst.max(err);
                    max_error = max_error.max(err);
                    out.push(p);
                }
            }
            panels.extend(out);
            Ok(worst)
        };
        let mut a = opts.tau_lo;
        while a < 0.5 {
            let b = (2.0 * a).min(1.0);
            fit(a, b, &mut panels)?;
            a = b;
        }
        fit(a, 1.0, &mut panels)?;
        let mut a = 1.0;
        let mut width = 1.0;
        let mut truncated = true;
        let mut tail = Vec::new();
        while a < opts.tau_max {
            let b = (a + width).min(opts.tau_max);
            let worst = fit(a, b, &mut panels)?;
            let r_end = r0 - panels.last().map(|p| p.eval(b)).unwrap_or(0.0);
            tail.push((b, r_end));
            a = b;
            if worst < 1e-3 * (opts.rel_tol * r0.abs() + abs_floor) {
                width = (2.0 * width).min(8.0);
            }
            if r_end.abs() < 1e-13 * r0.abs() && a > 4.0 {
                truncated = false;
                break;
            }
        }
        panels.sort_by(|x, y| x.a.partial_cmp(&y.a).unwrap());
        let decay_rate = match tail.len() {
            n if n >= 2 => {
                let (t1, r1) = tail[n - 2];
                let (t2, r2) = tail[n - 1];
                let rate = (r1.abs() / r2.abs()).ln() / (t2 - t1);
                if rate.is_finite() && rate > 0.0 {
                    rate
                } else {
                    0.0
                }
            }
            _ => 0.0,
        };
        Ok(Self {
            process,
            hurst: model.params.hurst,
            r0,
            tau_lo: opts.tau_lo,
            tau_hi: a,
            decay_rate,
            max_error,
            truncated,
            panels,
            model: fine,
        })
    }

    pub fn params(&self) -> &GfbmParams<f64> {
        &self.model.params
    }

    pub fn model(&self) -> &CovarianceModel<f64> {
        &self.model
    }

    /// Panel boundaries of the interpolant.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.panels.iter().map(|p| p.a).collect();
        v.extend(self.panels.last().map(|p| p.b));
        v
    }

    /// `S(tau) = r(0) - r(tau)`.
    pub fn structure(&self, tau: f64) -> f64 {
        let tau = tau.abs();
        if tau == 0.0 {
            return 0.0;
        }
        if tau < self.tau_lo {
            return lamperti_structure(&self.model, self.process, tau)
                .map(|e| e.value)
                .unwrap_or(f64::NAN);
        }
        if tau >= self.tau_hi {
            return self.r0 - self.cov(tau);
        }
        let i = self.panels.partition_point(|p| p.b <= tau);
        let i = i.min(self.panels.len() - 1);
        self.panels[i].eval(tau)
    }

    /// `r(tau)`.
    pub fn cov(&self, tau: f64) -> f64 {
        let tau = tau.abs();
        if tau >= self.tau_hi {
            let last = self.panels.last().expect("table has panels");
            let r_hi = self.r0 - last.eval(self.tau_hi);
            return r_hi * (-self.decay_rate * (tau - self.tau_hi)).exp();
        }
        self.r0 - self.structure(tau)
    }

    /// `(1/pi) int_0^inf r(tau) cos(lambda tau) dtau`.
    ///
    /// Panels are split at the zeros of the cosine and integrated by 20-point
    /// Gauss-Legendre; panels spanning many periods are integrated by parts,
    /// which terminates exactly on the polynomial interpolant.
    pub fn cosine_transform(&self, lambda: f64) -> f64 {
        let lambda = lambda.abs();
        let t_hi = self.tau_hi;
        // r = r0 - S, with the r0 part done in closed form.
        let mut total = if lambda == 0.0 {
            self.r0 * t_hi
        } else {
            self.r0 * (lambda * t_hi).sin() / lambda
        };
        let (x, w) = gl20();
        for p in &self.panels {
            let width = p.b - p.a;
            if lambda * width > 4.0 * CHEB_N as f64 {
                total -= by_parts(p, lambda);
                continue;
            }
            let mut cuts = vec![p.a];
            if lambda > 0.0 {
                let period = std::f64::consts::PI / lambda;
                let mut k = (p.a / period - 0.5).ceil().max(0.0);
                loop {
                    let z = (k + 0.5) * period;
                    if z >= p.b {
                        break;
                    }
                    if z > p.a {
                        cuts.push(z);
                    }
                    k += 1.0;
                }
            }
            cuts.push(p.b);
            for pair in cuts.windows(2) {
                let (lo, hi) = (pair[0], pair[1]);
                let (m, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
                let mut acc = 0.0;
                for (xi, wi) in x.iter().zip(w) {
                    let tau = m + h * xi;
                    acc += wi * p.eval(tau) * (lambda * tau).cos();
                }
                total -= acc * h;
            }
        }
        total / std::f64::consts::PI
    }

    /// Bound on the absolute error of [`Self::cosine_transform`].
    pub fn transform_accuracy(&self) -> f64 {
        let interp = self.max_error * self.tau_hi;
        let r_hi = self.cov(self.tau_hi).abs();
        let tail = if self.decay_rate > 0.0 {
            r_hi / self.decay_rate
        } else {
            r_hi * self.tau_hi
        };
        let head = self.tau_lo * self.structure(self.tau_lo).abs();
        (interp + tail + head) / std::f64::consts::PI + 1e-15 * self.r0.abs() * self.tau_hi
    }
}

/// `int_a^b p(tau) cos(lambda tau) dtau` by repeated integration by parts.
fn by_parts(p: &ChebPanel, lambda: f64) -> f64 {
    let (da, db) = p.end_derivatives();
    let (sa, ca) = (lambda * p.a).sin_cos();
    let (sb, cb) = (lambda * p.b).sin_cos();
    let mut total = 0.0;
    let mut lp = lambda;
    for k in 0..da.len() {
        // Antiderivative factors cycle through sin, cos, -sin, -cos.
        let (fa, fb) = match k % 4 {
            0 => (sa, sb),
            1 => (ca, cb),
            2 => (-sa, -sb),
            _ => (-ca, -cb),
        };
        total += (db[k] * fb - da[k] * fa) / lp;
        lp *= lambda;
    }
    total
}

/// Tabulated spectral density of `U`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralTable {
    pub alpha: f64,
    pub gamma: f64,
    pub lambdas: Vec<f64>,
    pub density: Vec<f64>,
    /// Time-domain truncation point of the cosine transform.
    pub r_trunc: f64,
    /// `(tau, r_U(tau))` samples from the covariance table.
    pub cov_samples: Vec<(f64, f64)>,
    /// Estimated bound on the absolute error of each density value.
    pub accuracy: f64,
    /// `r_U(0) = B(2a+1, 1-g)`.
    pub r0: f64,
}

fn require_spectral(params: &GfbmParams<f64>) -> Result<()> {
    if params.alpha > 0.5 {
        return Err(Error::Regime(format!(
            "the spectral density of U needs alpha <= 1/2 (alpha = {})",
            params.alpha
        )));
    }
    Ok(())
}

/// Frequency grid used by [`spectral_table`]: blocks `[2^k, 2^{k+1}]` of 128
/// steps (256 on `[0, 4]`), with the step capped at 1/2.
pub fn standard_lambdas(lambda_max: f64) -> Vec<f64> {
    let mut out = vec![0.0];
    let mut lo: f64 = 0.0;
    let mut hi: f64 = 4.0;
    while lo < lambda_max {
        let hi_c = hi.min(lambda_max);
        let base = if lo == 0.0 { 256.0 } else { 128.0 };
        let step = ((hi - lo) / base).min(0.5);
        let n = ((hi_c - lo) / step).round().max(1.0) as usize;
        for k in 1..=n {
            out.push(lo + (hi_c - lo) * k as f64 / n as f64);
        }
        lo = hi_c;
        hi = 2.0 * hi;
    }
    out
}

/// Spectral density of `U` at the given frequencies.
pub fn spectral_density(params: &GfbmParams<f64>, lambdas: &[f64]) -> Result<SpectralTable> {
    require_spectral(params)?;
    let model = CovarianceModel::new(*params)?;
    let table = LampertiTable::build(&model, ProcessId::U)?;
    spectral_density_from(&table, lambdas)
}

/// As [`spectral_density`] with a prebuilt `U` table.
pub fn spectral_density_from(table: &LampertiTable, lambdas: &[f64]) -> Result<SpectralTable> {
    require_spectral(table.params())?;
    if table.process != ProcessId::U && table.process != ProcessId::Z {
        return Err(Error::InvalidInput(
            "spectral density needs the U table".into(),
        ));
    }
    if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(DomainError::arg("lambdas", "frequencies must be finite and >= 0").into());
    }
    if lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DomainError::arg("lambdas", "frequencies must be increasing").into());
    }
    let density: Vec<f64> = lambdas
        .par_iter()
        .map(|&l| table.cosine_transform(l))
        .collect();
    let cov_samples = (0..=200)
        .map(|k| {
            let tau = k as f64 * 0.05;
            (tau, table.cov(tau))
        })
        .collect();
    let p = table.params();
    Ok(SpectralTable {
        alpha: p.alpha,
        gamma: p.gamma,
        lambdas: lambdas.to_vec(),
        density,
        r_trunc: table.tau_hi,
        cov_samples,
        accuracy: table.transform_accuracy(),
        r0: table.r0,
    })
}

/// Spectral table on [`standard_lambdas`] up to 512.
pub fn spectral_table(params: &GfbmParams<f64>) -> Result<SpectralTable> {
    spectral_density(params, &standard_lambdas(512.0))
}

/// Cumulative integral of tabulated values by local quadratic interpolation.
fn cumulative(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    let g = 0.5 / 3f64.sqrt();
    let quad = |i0: usize, lo: f64, hi: f64| -> f64 {
        let (x0, x1, x2) = (x[i0], x[i0 + 1], x[i0 + 2]);
        let (y0, y1, y2) = (y[i0], y[i0 + 1], y[i0 + 2]);
        let p = |t: f64| {
            y0 * (t - x1) * (t - x2) / ((x0 - x1) * (x0 - x2))
                + y1 * (t - x0) * (t - x2) / ((x1 - x0) * (x1 - x2))
                + y2 * (t - x0) * (t - x1) / ((x2 - x0) * (x2 - x1))
        };
        let (m, h) = (0.5 * (lo + hi), hi - lo);
        0.5 * h * (p(m - g * h) + p(m + g * h))
    };
    for i in 0..n - 1 {
        let piece = if n == 2 {
            0.5 * (x[1] - x[0]) * (y[0] + y[1])
        } else if i == 0 {
            quad(0, x[0], x[1])
        } else if i == n - 2 {
            quad(n - 3, x[i], x[i + 1])
        } else {
            0.5 * (quad(i - 1, x[i], x[i + 1]) + quad(i, x[i], x[i + 1]))
        };
        out[i + 1] = out[i] + piece;
    }
    out
}

/// Power law `C lambda^{-p}` fitted to the last octave of the table.
fn tail_law(t: &SpectralTable) -> Option<(f64, f64)> {
    let lmax = *t.lambdas.last()?;
    let pts: Vec<(f64, f64)> = t
        .lambdas
        .iter()
        .zip(&t.density)
        .filter(|(l, f)| **l >= 0.5 * lmax && **f > 0.0)
        .map(|(l, f)| (l.ln(), f.ln()))
        .collect();
    let (slope, icept) = crate::regression::fit_line(&pts)?;
    let p = -slope;
    (p > 1.0).then(|| (icept.exp(), p))
}

impl SpectralTable {
    /// `2 int_0^inf f_U(lambda) cos(lambda tau) dlambda`, which should return `r_U(tau)`.
    ///
    /// The range beyond the last frequency is covered by a power law fitted to
    /// the last octave (leading term only for `tau > 0`).
    pub fn reconstruct(&self, tau: f64) -> f64 {
        let y: Vec<f64> = self
            .lambdas
            .iter()
            .zip(&self.density)
            .map(|(l, f)| f * (l * tau).cos())
            .collect();
        let body = *cumulative(&self.lambdas, &y).last().unwrap_or(&0.0);
        let tail = match (tail_law(self), self.lambdas.last()) {
            (Some((c, p)), Some(&lmax)) => {
                if tau == 0.0 {
                    c * lmax.powf(1.0 - p) / (p - 1.0)
                } else {
                    -c * lmax.powf(-p) * (lmax * tau).sin() / tau
                }
            }
            _ => 0.0,
        };
        2.0 * (body + tail)
    }

    /// `2 int_0^inf f_U`, which should equal `r_U(0)`.
    pub fn total_mass(&self) -> f64 {
        self.reconstruct(0.0)
    }

    fn integral_to(&self, weights: &[f64], u: f64) -> Result<f64> {
        let lmax = *self.lambdas.last().unwrap_or(&0.0);
        if !(u > 0.0) || u > lmax || self.lambdas.first() != Some(&0.0) {
            return Err(DomainError::arg(
                "u",
                format!("frequency {u} outside the table range (0, {lmax}]"),
            )
            .into());
        }
        let k = self.lambdas.partition_point(|l| *l <= u);
        let cum = cumulative(&self.lambdas[..k], &weights[..k]);
        let mut v = *cum.last().unwrap_or(&0.0);
        let last = self.lambdas[k - 1];
        if u > last {
            // Linear piece to an off-grid u.
            let (l1, w1) = (self.lambdas[k], weights[k]);
            let w0 = weights[k - 1];
            let wu = w0 + (w1 - w0) * (u - last) / (l1 - last);
            v += 0.5 * (u - last) * (w0 + wu);
        }
        Ok(v)
    }

    /// Masses below and above `u`.
    pub fn tail_mass(&self, u: f64) -> Result<TailMass> {
        let second: Vec<f64> = self
            .lambdas
            .iter()
            .zip(&self.density)
            .map(|(l, f)| l * l * f)
            .collect();
        let low = 2.0 * self.integral_to(&second, u)?;
        let high = self.r0 - 2.0 * self.integral_to(&self.density, u)?;
        Ok(TailMass {
            u,
            low_mass: low,
            high_mass: high,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda,f_U\n");
        for (l, f) in self.lambdas.iter().zip(&self.density) {
            s.push_str(&format!("{l:.16e},{f:.16e}\n"));
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Spectral masses at one cut frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailMass {
    pub u: f64,
    /// `int_{|lambda| < u} lambda^2 f_U`.
    pub low_mass: f64,
    /// `int_{|lambda| >= u} f_U`.
    pub high_mass: f64,
}

/// Power-law fits of the spectral masses over a frequency ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailMassFit {
    pub masses: Vec<TailMass>,
    /// Slope of `ln(low_mass / (1 + ln u)^eta)` against `ln u`.
    pub low_exponent: f64,
    /// Slope of `ln(high_mass / (1 + ln u)^eta)` against `ln u`.
    pub high_exponent: f64,
    /// `1 - 2a`.
    pub predicted_low: f64,
    /// `-(2a + 1)`.
    pub predicted_high: f64,
    /// Largest `low_mass / (u^{1-2a} (1 + ln u)^eta)` over the ladder.
    pub low_constant: f64,
    /// Largest `high_mass / (u^{-(2a+1)} (1 + ln u)^eta)` over the ladder.
    pub high_constant: f64,
    /// Lower end of the ladder, [`TAIL_U0`].
    pub u0: f64,
    /// `eta = 1` at `a = 1/2`.
    pub log_correction: bool,
}

/// Fits the masses of [`SpectralTable::tail_mass`] over `ladder` (all `>= u0`).
pub fn tail_mass_fit(table: &SpectralTable, ladder: &[f64]) -> Result<TailMassFit> {
    if ladder.len() < 3 {
        return Err(Error::InsufficientData(
            "tail-mass fit needs at least 3 frequencies".into(),
        ));
    }
    if let Some(u) = ladder.iter().find(|u| **u < TAIL_U0) {
        return Err(DomainError::arg("u", format!("{u} below u0 = {TAIL_U0}")).into());
    }
    let a = table.alpha;
    let log_correction = a == 0.5;
    let eta = if log_correction { 1.0 } else { 0.0 };
    let masses = ladder
        .iter()
        .map(|&u| table.tail_mass(u))
        .collect::<Result<Vec<_>>>()?;
    let logf = |u: f64| eta * (1.0 + u.ln()).ln();
    let lows: Vec<(f64, f64)> = masses
        .iter()
        .map(|m| (m.u.ln(), m.low_mass.ln() - logf(m.u)))
        .collect();
    let highs: Vec<(f64, f64)> = masses
        .iter()
        .map(|m| (m.u.ln(), m.high_mass.ln() - logf(m.u)))
        .collect();
    let bad = || Error::InsufficientData("nonpositive spectral mass in the ladder".into());
    let (low_exponent, _) = crate::regression::fit_line(&lows).ok_or_else(bad)?;
    let (high_exponent, _) = crate::regression::fit_line(&highs).ok_or_else(bad)?;
    let low_constant = masses
        .iter()
        .map(|m| m.low_mass / (m.u.powf(1.0 - 2.0 * a) * (1.0 + m.u.ln()).powf(eta)))
        .fold(0.0, f64::max);
    let high_constant = masses
        .iter()
        .map(|m| m.high_mass / (m.u.powf(-(2.0 * a + 1.0)) * (1.0 + m.u.ln()).powf(eta)))
        .fold(0.0, f64::max);
    Ok(TailMassFit {
        masses,
        low_exponent,
        high_exponent,
        predicted_low: 1.0 - 2.0 * a,
        predicted_high: -(2.0 * a + 1.0),
        low_constant,
        high_constant,
        u0: TAIL_U0,
        log_correction,
    })
}

/// Two-sided envelope of `E[(U(s) - U(t))^2] = 2 S(h)` against
/// `h^{2a+1} (1 + |ln h|)^eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariogramEnvelope {
    pub lags: Vec<f64>,
    pub ratios: Vec<f64>,
    pub c_lower: f64,
    pub c_upper: f64,
    pub log_correction: bool,
}

pub fn variogram_envelope(model: &CovarianceModel<f64>, lags: &[f64]) -> Result<VariogramEnvelope> {
    require_spectral(&model.params)?;
    if lags.is_empty() || lags.iter().any(|h| !(*h > 0.0)) {
        return Err(DomainError::arg("lags", "need positive lags").into());
    }
    let a = model.params.alpha;
    let log_correction = a == 0.5;
    let eta = if log_correction { 1.0 } else { 0.0 };
    let ratios = lags
        .iter()
        .map(|&h| {
            let s = lamperti_structure(model, ProcessId::U, h)?.value;
            Ok(2.0 * s / (h.powf(2.0 * a + 1.0) * (1.0 + h.ln().abs()).powf(eta)))
        })
        .collect::<Result<Vec<f64>>>()?;
    let c_lower = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let c_upper = ratios.iter().cloned().fold(0.0, f64::max);
    Ok(VariogramEnvelope {
        lags: lags.to_vec(),
        ratios,
        c_lower,
        c_upper,
        log_correction,
    })
}
