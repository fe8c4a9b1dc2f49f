//! Second-order structure of the process and of its pieces.
//!
//! `X = Y + Z` with `Y` driven by the noise on `(-inf, 0]` and `Z` by the
//! noise on `[0, t]`. All covariances come from the Wiener isometry and are
//! evaluated by deterministic quadrature. The full covariance of `X` is taken
//! from the variance `c_var t^{2H}` and the increment variance (polarization),
//! which keeps small increments accurate and gives an independent route to the
//! identity `cov_x = cov_y + cov_z`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::GfbmParams;
use crate::quadrature::{
    beta, integrate_finite_with, integrate_tail_with, pow_step, Node, QuadConfig, QuadResult,
    SingularIntegral, WithDistances,
};
use crate::scalar::Real;

/// Which process a covariance or an ensemble refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProcessId {
    X,
    Y,
    Z,
    /// Derivative of `Z`, defined for `alpha > 1/2`.
    Zprime,
    /// Derivative of `Y`, defined on `t > 0`.
    Yprime,
    /// Stationary Lamperti transform of `Z`.
    U,
}

impl ProcessId {
    /// Self-similarity index of the process.
    pub fn hurst<T: Real>(&self, p: &GfbmParams<T>) -> T {
        match self {
            ProcessId::Zprime | ProcessId::Yprime => p.hurst - T::one(),
            ProcessId::U => T::zero(),
            _ => p.hurst,
        }
    }

    /// Whether the process vanishes at `t = 0`.
    pub fn pinned_at_origin(&self) -> bool {
        matches!(self, ProcessId::X | ProcessId::Y | ProcessId::Z)
    }
}

/// A covariance value with its quadrature bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovEvaluation<T = f64> {
    pub value: T,
    pub abs_error: T,
    pub evaluations: usize,
    pub converged: bool,
}

impl<T: Real> CovEvaluation<T> {
    pub(crate) fn zero() -> Self {
        Self {
            value: T::zero(),
            abs_error: T::zero(),
            evaluations: 0,
            converged: true,
        }
    }

    pub(crate) fn exact(value: T) -> Self {
        Self {
            value,
            ..Self::zero()
        }
    }

    fn add(mut self, r: QuadResult<T>) -> Self {
        self.value = self.value + r.value;
        self.abs_error = self.abs_error + r.abs_error_estimate;
        self.evaluations += r.evaluations;
        self.converged &= r.converged;
        self
    }

    pub(crate) fn combine(mut self, other: Self, sign: T) -> Self {
        self.value = self.value + sign * other.value;
        self.abs_error = self.abs_error + other.abs_error;
        self.evaluations += other.evaluations;
        self.converged &= other.converged;
        self
    }

    pub(crate) fn scale(mut self, c: T) -> Self {
        self.value = self.value * c;
        self.abs_error = self.abs_error * c.abs();
        self
    }
}

/// The explicit constants attached to the process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConstants<T = f64> {
    /// `E[X(1)^2] = B(2a+1, 1-g) + int_0^inf ((1+u)^a - u^a)^2 u^{-g} du`.
    pub c_var: T,
    /// Scale of `E[(Y(t) - Y(s))^2]` against `|t - s|^2 / t^{2-2H}`:
    /// `a^2 int_0^inf (1+u)^{2a-2} u^{-g} du`; zero at `a = 0`.
    pub y_increment: T,
    /// Lower envelope of `Z` increments when `s <= 2(t - s)`: `1/(2a+1)`.
    pub z_increment_lower: T,
    /// Matching upper envelope: `2/(1-g) + 1/(2a+1) + B(2a+1, 1-g) 2^{2a+1}`.
    pub z_increment_upper: T,
    /// Limit of `E[(Z(t) - Z(s))^2] t^g / |t - s|^{2a+1}`:
    /// `1/(2a+1) + int_0^inf ((1+v)^a - v^a)^2 dv`; finite only for `a < 1/2`.
    pub local_variance: Option<T>,
    /// Scale of the tangent fBm, `sqrt(local_variance)`.
    pub tangent_scale: Option<T>,
}

fn quad_err<T: Real>(e: crate::quadrature::QuadError<T>) -> Error {
    let mut err: Error = e.into();
    if let Error::NonConvergence { ref mut module, .. } = err {
        *module = "covariance";
    }
    err
}

fn finite<T: Real, F: Fn(Node<T>) -> T>(
    f: F,
    a: T,
    b: T,
    el: T,
    er: T,
    cfg: &QuadConfig<T>,
) -> Result<QuadResult<T>> {
    let spec = SingularIntegral::finite(WithDistances(f), a, b)
        .left(el)
        .right(er);
    integrate_finite_with(&spec, cfg).map_err(quad_err)
}

fn tail<T: Real, F: Fn(Node<T>) -> T>(
    f: F,
    split: T,
    el: T,
    k: T,
    cfg: &QuadConfig<T>,
) -> Result<QuadResult<T>> {
    let spec = SingularIntegral::tail(WithDistances(f), T::zero(), k)
        .left(el)
        .split_at(split);
    integrate_tail_with(&spec, cfg).map_err(quad_err)
}

/// Where to cut `[0, s]` so that a feature of width `h` at `u = s` gets its own piece.
fn near_cut<T: Real>(s: T, h: T) -> Option<T> {
    let w = T::c(8.0) * h;
    (w < s * T::c(0.5)).then(|| s - w)
}

/// `int_0^s (t-u)^a (s-u)^a u^{-g} du` for `0 < s <= t`.
fn z_kernel<T: Real>(a: T, g: T, s: T, t: T, cfg: &QuadConfig<T>) -> Result<CovEvaluation<T>> {
    let zero = T::zero();
    let h = t - s;
    let scale = s.powf(T::one() - g) * (s * t).powf(a).max(s.powf(T::c(2.0) * a));
    let cfg = cfg.scaled(scale);
    let right = if h == zero { T::c(2.0) * a } else { a };
    let mut acc = CovEvaluation::zero();
    match near_cut(s, h).filter(|_| h > zero) {
        Some(c) => {
            let off = s - c;
            let f1 = |x: Node<T>| {
                let d = off + x.to_upper;
                (h + d).powf(a) * d.powf(a) * x.u.powf(-g)
            };
            acc = acc.add(finite(f1, zero, c, -g, zero, &cfg)?);
            let f2 = |x: Node<T>| {
                let d = x.to_upper;
                (h + d).powf(a) * d.powf(a) * x.u.powf(-g)
            };
            acc = acc.add(finite(f2, c, s, zero, right, &cfg)?);
        }
        None => {
            let f = |x: Node<T>| {
                let d = x.to_upper;
                (h + d).powf(a) * d.powf(a) * x.u.powf(-g)
            };
            acc = acc.add(finite(f, zero, s, -g, right, &cfg)?);
        }
    }
    Ok(acc)
}

/// `int_0^inf ((t+u)^a - u^a)((s+u)^a - u^a) u^{-g} du` for `0 <= s <= t`.
fn y_kernel<T: Real>(a: T, g: T, s: T, t: T, cfg: &QuadConfig<T>) -> Result<CovEvaluation<T>> {
    let zero = T::zero();
    if a == zero || s == zero {
        return Ok(CovEvaluation::zero());
    }
    let hurst = a - g * T::c(0.5) + T::c(0.5);
    let cfg = cfg.scaled(a * a * (s * t).powf(hurst));
    let el = if a < zero { T::c(2.0) * a - g } else { -g };
    let k = T::c(2.0) * a - T::c(2.0) - g;
    let f = |x: Node<T>| {
        let u = x.u;
        pow_step(u, t, a) * pow_step(u, s, a) * u.powf(-g)
    };
    Ok(CovEvaluation::zero().add(tail(f, t, el, k, &cfg)?))
}

/// `E[(Z(s + h) - Z(s))^2]` for kernel exponent `a`, weight `g`, `s >= 0`, `h > 0`.
fn dz_kernel<T: Real>(a: T, g: T, s: T, h: T, cfg: &QuadConfig<T>) -> Result<CovEvaluation<T>> {
    let zero = T::zero();
    let two = T::c(2.0);
    let t = s + h;
    let cfg = cfg.scaled(h.powf(two * a + T::one()) * t.powf(-g));
    let mut acc = CovEvaluation::zero();
    // Fresh noise on [s, t], in the offset v = u - s.
    let fresh = |x: Node<T>| x.to_upper.powf(two * a) * (s + x.u).powf(-g);
    let el = if s == zero { -g } else { zero };
    acc = acc.add(finite(fresh, zero, h, el, two * a, &cfg)?);
    if s == zero || a == zero {
        return Ok(acc);
    }
    // Kernel change on [0, s].
    let er = if a < zero { two * a } else { zero };
    match near_cut(s, h) {
        Some(c) => {
            let off = s - c;
            let f1 = |x: Node<T>| {
                let d = off + x.to_upper;
                let q = pow_step(d, h, a);
                q * q * x.u.powf(-g)
            };
            acc = acc.add(finite(f1, zero, c, -g, zero, &cfg)?);
            let f2 = |x: Node<T>| {
                let d = x.to_upper;
                let q = pow_step(d, h, a);
                q * q * x.u.powf(-g)
            };
            acc = acc.add(finite(f2, c, s, zero, er, &cfg)?);
        }
        None => {
            let f = |x: Node<T>| {
                let d = x.to_upper;
                let q = pow_step(d, h, a);
                q * q * x.u.powf(-g)
            };
            acc = acc.add(finite(f, zero, s, -g, er, &cfg)?);
        }
    }
    Ok(acc)
}

/// `E[(Y(s + h) - Y(s))^2]` for `s >= 0`, `h > 0`.
fn dy_kernel<T: Real>(a: T, g: T, s: T, h: T, cfg: &QuadConfig<T>) -> Result<CovEvaluation<T>> {
    let zero = T::zero();
    let two = T::c(2.0);
    if a == zero {
        return Ok(CovEvaluation::zero());
    }
    let t = s + h;
    let hurst = a - g * T::c(0.5) + T::c(0.5);
    let cfg = cfg.scaled(a * a * h * h * t.powf(two * hurst - two));
    let el = if s == zero && a < zero {
        two * a - g
    } else {
        -g
    };
    let k = two * a - two - g;
    let f = |x: Node<T>| {
        let u = x.u;
        let q = pow_step(s + u, h, a);
        q * q * u.powf(-g)
    };
    Ok(CovEvaluation::zero().add(tail(f, t, el, k, &cfg)?))
}

/// `int_0^inf (t+u)^a (s+u)^a u^{-g} du` for `0 < s <= t` and `2a - g < -1`.
fn yprime_kernel<T: Real>(a: T, g: T, s: T, t: T, cfg: &QuadConfig<T>) -> Result<CovEvaluation<T>> {
    let two = T::c(2.0);
    let cfg = cfg.scaled((s * t).powf(a + (T::one() - g) * T::c(0.5)));
    let f = |x: Node<T>| {
        let u = x.u;
        (t + u).powf(a) * (s + u).powf(a) * u.powf(-g)
    };
    Ok(CovEvaluation::zero().add(tail(f, t, -g, two * a - g, &cfg)?))
}

/// `E[(Y'(s + h) - Y'(s))^2] / alpha^2` for `s > 0`, `h > 0`.
fn dyprime_kernel<T: Real>(
    a: T,
    g: T,
    s: T,
    h: T,
    cfg: &QuadConfig<T>,
) -> Result<CovEvaluation<T>> {
    let two = T::c(2.0);
    let t = s + h;
    let cfg = cfg.scaled(h * h * t.powf(two * a - two - g + T::one()));
    let f = |x: Node<T>| {
        let u = x.u;
        let q = pow_step(s + u, h, a);
        q * q * u.powf(-g)
    };
    Ok(CovEvaluation::zero().add(tail(f, t, -g, two * a - two - g, &cfg)?))
}

fn check_times<T: Real>(s: T, t: T) -> Result<(T, T)> {
    if !(s >= T::zero()) || !(t >= T::zero()) || !s.is_finite() || !t.is_finite() {
        return Err(crate::error::DomainError::arg(
            "time",
            format!("times must be finite and nonnegative, got ({s}, {t})"),
        )
        .into());
    }
    Ok(if s <= t { (s, t) } else { (t, s) })
}

/// Covariance evaluator with the process constants cached.
#[derive(Debug, Clone)]
pub struct CovarianceModel<T: Real = f64> {
    pub params: GfbmParams<T>,
    pub cfg: QuadConfig<T>,
    c_var: T,
    beta_z: T,
}

impl<T: Real> CovarianceModel<T> {
    pub fn new(params: GfbmParams<T>) -> Result<Self> {
        Self::with_config(params, QuadConfig::default())
    }

    pub fn with_config(params: GfbmParams<T>, cfg: QuadConfig<T>) -> Result<Self> {
        let (a, g) = (params.alpha, params.gamma);
        let beta_z = beta(T::c(2.0) * a + T::one(), T::one() - g)?;
        let y = y_kernel(a, g, T::one(), T::one(), &cfg)?;
        Ok(Self {
            params,
            cfg,
            c_var: beta_z + y.value,
            beta_z,
        })
    }

    /// `E[X(1)^2]`.
    pub fn c_var(&self) -> T {
        self.c_var
    }

    /// `E[Z(1)^2] = B(2a+1, 1-g)`.
    pub fn z_variance_constant(&self) -> T {
        self.beta_z
    }

    pub fn cov_z(&self, s: T, t: T) -> Result<CovEvaluation<T>> {
        let (s, t) = check_times(s, t)?;
        if s == T::zero() {
            return Ok(CovEvaluation::zero());
        }
        z_kernel(self.params.alpha, self.params.gamma, s, t, &self.cfg)
    }

    pub fn cov_y(&self, s: T, t: T) -> Result<CovEvaluation<T>> {
        let (s, t) = check_times(s, t)?;
        y_kernel(self.params.alpha, self.params.gamma, s, t, &self.cfg)
    }

    pub fn cov_x(&self, s: T, t: T) -> Result<CovEvaluation<T>> {
        let (s, t) = check_times(s, t)?;
        if s == T::zero() {
            return Ok(CovEvaluation::zero());
        }
        let two_h = T::c(2.0) * self.params.hurst;
        let var = self.c_var * (s.powf(two_h) + t.powf(two_h));
        if s == t {
            return Ok(CovEvaluation::exact(self.c_var * t.powf(two_h)));
        }
        let d = self.increment_x(s, t - s)?;
        Ok(CovEvaluation::exact(var)
            .combine(d, -T::one())
            .scale(T::c(0.5)))
    }

    /// `cov_y + cov_z`; accurate in relative terms when `t / s` is large, where
    /// the polarization route of [`Self::cov_x`] cancels.
    pub fn cov_x_direct(&self, s: T, t: T) -> Result<CovEvaluation<T>> {
        let y = self.cov_y(s, t)?;
        let z = self.cov_z(s, t)?;
        Ok(y.combine(z, T::one()))
    }

    /// `E[P(1)^2]` for the self-similar processes `X`, `Y`, `Z` (and `U`, which shares it with `Z`).
    pub fn unit_variance(&self, process: ProcessId) -> Result<T> {
        match process {
            ProcessId::X => Ok(self.c_var),
            ProcessId::Z | ProcessId::U => Ok(self.beta_z),
            ProcessId::Y => Ok(self.c_var - self.beta_z),
            ProcessId::Zprime => Ok(self.cov_zprime(T::one(), T::one())?.value),
            ProcessId::Yprime => Ok(self.cov_yprime(T::one(), T::one())?.value),
        }
    }

    fn require_smooth(&self) -> Result<()> {
        if self.params.alpha <= T::c(0.5) {
            return Err(Error::Regime(format!(
                "the derivative of Z exists only for alpha > 1/2 (alpha = {})",
                self.params.alpha
            )));
        }
        Ok(())
    }

    pub fn cov_zprime(&self, s: T, t: T) -> Result<CovEvaluation<T>> {
        self.require_smooth()?;
        let (s, t) = check_times(s, t)?;
        if s == T::zero() {
            return Ok(CovEvaluation::zero());
        }
        let a = self.params.alpha;
        Ok(z_kernel(a - T::one(), self.params.gamma, s, t, &self.cfg)?.scale(a * a))
    }

    pub fn cov_yprime(&self, s: T, t: T) -> Result<CovEvaluation<T>> {
        let (s, t) = check_times(s, t)?;
        if s == T::zero() {
            return Err(crate::error::DomainError::arg(
                "time",
                "the derivative of Y is defined for t > 0 only",
            )
            .into());
        }
        let a = self.params.alpha;
        if a == T::zero() {
            return Ok(CovEvaluation::zero());
        }
        Ok(yprime_kernel(a - T::one(), self.params.gamma, s, t, &self.cfg)?.scale(a * a))
    }

    /// `E[(X(s+h) - X(s))^2] = E[(Y(s+h) - Y(s))^2] + E[(Z(s+h) - Z(s))^2]`.
    fn increment_x(&self, s: T, h: T) -> Result<CovEvaluation<T>> {
        let (a, g) = (self.params.alpha, self.params.gamma);
        let dz = dz_kernel(a, g, s, h, &self.cfg)?;
        let dy = dy_kernel(a, g, s, h, &self.cfg)?;
        Ok(dz.combine(dy, T::one()))
    }

    /// Increment variance `E[(P(t) - P(s))^2]` of the given process.
    pub fn increment_var(&self, process: ProcessId, s: T, t: T) -> Result<CovEvaluation<T>> {
        let (s, t) = check_times(s, t)?;
        self.increment_step(process, s, t - s)
    }

    /// `E[(P(s + h) - P(s))^2]` with the step passed separately, which keeps
    /// full relative precision when `h` is far below the rounding of `s`.
    pub fn increment_step(&self, process: ProcessId, s: T, h: T) -> Result<CovEvaluation<T>> {
        check_times(s, h)?;
        if h == T::zero() {
            return Ok(CovEvaluation::zero());
        }
        let (a, g) = (self.params.alpha, self.params.gamma);
        match process {
            ProcessId::X => {
                if s == T::zero() {
                    let two_h = T::c(2.0) * self.params.hurst;
                    return Ok(CovEvaluation::exact(self.c_var * h.powf(two_h)));
                }
                self.increment_x(s, h)
            }
            ProcessId::Z => dz_kernel(a, g, s, h, &self.cfg),
            ProcessId::Y => dy_kernel(a, g, s, h, &self.cfg),
            ProcessId::Zprime => {
                self.require_smooth()?;
                Ok(dz_kernel(a - T::one(), g, s, h, &self.cfg)?.scale(a * a))
            }
            ProcessId::Yprime => {
                if s == T::zero() {
                    return Err(crate::error::DomainError::arg(
                        "time",
                        "the derivative of Y is defined for t > 0 only",
                    )
                    .into());
                }
                if a == T::zero() {
                    return Ok(CovEvaluation::zero());
                }
                Ok(dyprime_kernel(a - T::one(), g, s, h, &self.cfg)?.scale(a * a))
            }
            ProcessId::U => {
                let r0 = self.beta_z;
                let r = crate::lamperti::r_u_with(self, h)?;
                Ok(CovEvaluation::exact(T::c(2.0) * r0).combine(r.scale(T::c(2.0)), -T::one()))
            }
        }
    }

    /// Covariance of the given process at `(s, t)`.
    pub fn cov(&self, process: ProcessId, s: T, t: T) -> Result<CovEvaluation<T>> {
        match process {
            ProcessId::X => self.cov_x(s, t),
            ProcessId::Y => self.cov_y(s, t),
            ProcessId::Z => self.cov_z(s, t),
            ProcessId::Zprime => self.cov_zprime(s, t),
            ProcessId::Yprime => self.cov_yprime(s, t),
            ProcessId::U => crate::lamperti::r_u_with(self, t - s),
        }
    }

    pub fn constants(&self) -> Result<ModelConstants<T>> {
        let (a, g) = (self.params.alpha, self.params.gamma);
        let zero = T::zero();
        let one = T::one();
        let two = T::c(2.0);
        let y_increment = if a == zero {
            zero
        } else {
            let f = |x: Node<T>| (one + x.u).powf(two * a - two) * x.u.powf(-g);
            a * a * tail(f, one, -g, two * a - two - g, &self.cfg)?.value
        };
        let z_increment_lower = one / (two * a + one);
        let z_increment_upper =
            two / (one - g) + z_increment_lower + self.beta_z * two.powf(two * a + one);
        let local_variance = if a < T::c(0.5) {
            let extra = if a == zero {
                zero
            } else {
                let el = if a < zero { two * a } else { zero };
                let f = |x: Node<T>| {
                    let q = pow_step(x.u, one, a);
                    q * q
                };
                tail(f, one, el, two * a - two, &self.cfg)?.value
            };
            Some(z_increment_lower + extra)
        } else {
            None
        };
        Ok(ModelConstants {
            c_var: self.c_var,
            y_increment,
            z_increment_lower,
            z_increment_upper,
            local_variance,
            tangent_scale: local_variance.map(|c| c.sqrt()),
        })
    }

    /// Envelope constants for `E[(Z(t)-Z(s))^2] / |t-s|^2` on `[lo, hi]` when `alpha > 1/2`.
    pub fn smooth_increment_constants(&self, lo: T, hi: T) -> Result<(T, T)> {
        self.require_smooth()?;
        let (a, g) = (self.params.alpha, self.params.gamma);
        let one = T::one();
        let two = T::c(2.0);
        let lower = a * a / (one - g) * hi.powf(two * a - two) * lo.powf(one - g);
        let upper = a * a * lo.powf(two * a - one - g) * beta(two * a - one, one - g)?;
        Ok((lower, upper))
    }
}

/// Which branch of the two-sided increment bounds applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IncrementCase {
    /// `s <= 2(t - s)`: explicit constants.
    Near,
    /// `s > 2(t - s)`: shape known, constants fitted.
    Far,
}

/// Increment variance of `Z` together with its two-sided envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncrementBounds<T = f64> {
    pub actual: T,
    /// `None` when `s == t`.
    pub lower: Option<T>,
    pub upper: Option<T>,
    pub case: IncrementCase,
}

/// Calibrated proportionality constants for the far case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCalibration<T = f64> {
    pub c_lower: T,
    pub c_upper: T,
    /// Values of `s/(t-s)` used in the sweep.
    pub ratios: Vec<T>,
    /// `actual / shape` at each ratio.
    pub normalized: Vec<T>,
    pub log_correction: bool,
}

impl<T: Real> CovarianceModel<T> {
    fn far_shape(&self, s: T, t: T) -> T {
        let (a, g) = (self.params.alpha, self.params.gamma);
        let h = t - s;
        let base = h.powf(T::c(2.0) * a + T::one()) * s.powf(-g);
        if a == T::c(0.5) {
            base * (T::one() + (s / h).ln())
        } else {
            base
        }
    }

    /// Sweeps `s/(t-s)` over `(2, 2^20]` and records the range of `actual / shape`.
    ///
    /// By self-similarity the ratio depends on `s/(t-s)` only, so the sweep
    /// covers every far-case pair.
    pub fn calibrate_envelope(&self) -> Result<EnvelopeCalibration<T>> {
        self.require_rough_or_critical()?;
        let mut ratios = Vec::new();
        let mut normalized = Vec::new();
        for k in 0..=38 {
            let rho = T::c(2.0) * T::c(2.0).powf(T::c(0.5) * T::c(k as f64)) + T::c(1e-9);
            let s = rho;
            let t = rho + T::one();
            let d = dz_kernel(self.params.alpha, self.params.gamma, s, t - s, &self.cfg)?;
            ratios.push(rho);
            normalized.push(d.value / self.far_shape(s, t));
        }
        let c_lower = normalized.iter().cloned().fold(T::infinity(), T::min);
        let c_upper = normalized.iter().cloned().fold(T::neg_infinity(), T::max);
        Ok(EnvelopeCalibration {
            c_lower,
            c_upper,
            ratios,
            normalized,
            log_correction: self.params.alpha == T::c(0.5),
        })
    }

    fn require_rough_or_critical(&self) -> Result<()> {
        if self.params.alpha > T::c(0.5) {
            return Err(Error::Regime(format!(
                "increment bounds need alpha <= 1/2 (alpha = {})",
                self.params.alpha
            )));
        }
        Ok(())
    }

    /// Increment variance of `Z` with the envelope for its case; `cal` supplies the
    /// far-case constants.
    pub fn increment_bounds_with(
        &self,
        s: T,
        t: T,
        cal: &EnvelopeCalibration<T>,
    ) -> Result<IncrementBounds<T>> {
        self.require_rough_or_critical()?;
        if !(s > T::zero()) || !(t >= s) {
            return Err(crate::error::DomainError::arg(
                "increment_bounds",
                format!("need 0 < s <= t, got ({s}, {t})"),
            )
            .into());
        }
        let h = t - s;
        let case = if s <= T::c(2.0) * h {
            IncrementCase::Near
        } else {
            IncrementCase::Far
        };
        if h == T::zero() {
            return Ok(IncrementBounds {
                actual: T::zero(),
                lower: None,
                upper: None,
                case,
            });
        }
        let actual = self.increment_var(ProcessId::Z, s, t)?.value;
        let (a, g) = (self.params.alpha, self.params.gamma);
        let (lower, upper) = match case {
            IncrementCase::Near => {
                let c = self.constants()?;
                let p = h.powf(T::c(2.0) * a + T::one());
                (
                    c.z_increment_lower * p * t.powf(-g),
                    c.z_increment_upper * p * s.powf(-g),
                )
            }
            IncrementCase::Far => {
                let shape = self.far_shape(s, t);
                (cal.c_lower * shape, cal.c_upper * shape)
            }
        };
        Ok(IncrementBounds {
            actual,
            lower: Some(lower),
            upper: Some(upper),
            case,
        })
    }

    pub fn increment_bounds(&self, s: T, t: T) -> Result<IncrementBounds<T>> {
        let cal = self.calibrate_envelope()?;
        self.increment_bounds_with(s, t, &cal)
    }
}

pub fn constants<T: Real>(params: &GfbmParams<T>) -> Result<ModelConstants<T>> {
    CovarianceModel::new(*params)?.constants()
}

pub fn cov_x<T: Real>(params: &GfbmParams<T>, s: T, t: T) -> Result<CovEvaluation<T>> {
    CovarianceModel::new(*params)?.cov_x(s, t)
}

pub fn cov_y<T: Real>(params: &GfbmParams<T>, s: T, t: T) -> Result<CovEvaluation<T>> {
    CovarianceModel::new(*params)?.cov_y(s, t)
}

pub fn cov_z<T: Real>(params: &GfbmParams<T>, s: T, t: T) -> Result<CovEvaluation<T>> {
    CovarianceModel::new(*params)?.cov_z(s, t)
}

pub fn cov_zprime<T: Real>(params: &GfbmParams<T>, s: T, t: T) -> Result<CovEvaluation<T>> {
    CovarianceModel::new(*params)?.cov_zprime(s, t)
}

pub fn cov_yprime<T: Real>(params: &GfbmParams<T>, s: T, t: T) -> Result<CovEvaluation<T>> {
    CovarianceModel::new(*params)?.cov_yprime(s, t)
}

pub fn increment_bounds<T: Real>(params: &GfbmParams<T>, s: T, t: T) -> Result<IncrementBounds<T>> {
    CovarianceModel::new(*params)?.increment_bounds(s, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(a: f64, g: f64) -> CovarianceModel<f64> {
        CovarianceModel::new(GfbmParams::validate(a, g).unwrap()).unwrap()
    }

    /// Variance constant of the Mandelbrot-Van Ness representation.
    fn fbm_variance(h: f64) -> f64 {
        use statrs::function::gamma::ln_gamma;
        (2.0 * ln_gamma(h + 0.5) - ln_gamma(2.0 * h + 1.0)).exp() / (std::f64::consts::PI * h).sin()
    }

    // Values from an independent 30-digit quadrature.
    const C_VAR_025_05: f64 = 2.009_620_899_912_372_3;
    const COV_Z_025_05_HALF_ONE: f64 = 0.997_464_877_231_129_9;
    const COV_Y_025_05_ONE_TWO: f64 = 0.615_428_655_760_299_4;

    #[test]
    fn brownian_motion() {
        let m = model(0.0, 0.0);
        assert_relative_eq!(m.cov_x(1.0, 3.0).unwrap().value, 1.0, max_relative = 1e-12);
        assert_relative_eq!(m.cov_x(3.0, 1.0).unwrap().value, 1.0, max_relative = 1e-12);
        let c = m.constants().unwrap();
        assert_relative_eq!(c.c_var, 1.0, max_relative = 1e-14);
        assert_relative_eq!(c.local_variance.unwrap(), 1.0, max_relative = 1e-14);
        assert_relative_eq!(c.tangent_scale.unwrap(), 1.0, max_relative = 1e-14);
        assert_eq!(c.y_increment, 0.0);
        assert_eq!(m.cov_y(0.3, 2.0).unwrap().value, 0.0);
    }

    #[test]
    fn c31_at_zero_alpha() {
        let c = model(0.0, 0.3).constants().unwrap();
        assert_eq!(c.z_increment_lower, 1.0);
    }

    #[test]
    fn frozen_values() {
        let m = model(0.25, 0.5);
        let c = m.constants().unwrap();
        assert_relative_eq!(c.c_var, C_VAR_025_05, max_relative = 1e-10);
        assert_relative_eq!(
            c.tangent_scale.unwrap().powi(2),
            c.local_variance.unwrap(),
            max_relative = 1e-14
        );
        assert_relative_eq!(
            m.cov_z(0.5, 1.0).unwrap().value,
            COV_Z_025_05_HALF_ONE,
            max_relative = 1e-10
        );
        assert_relative_eq!(
            m.cov_y(1.0, 2.0).unwrap().value,
            COV_Y_025_05_ONE_TWO,
            max_relative = 1e-10
        );
        // local_variance at (a, g) is the fBm variance constant with H = a + 1/2.
        assert_relative_eq!(
            c.local_variance.unwrap(),
            fbm_variance(0.75),
            max_relative = 1e-10
        );
    }

    #[test]
    fn z_variance_closed_forms() {
        let m = model(0.0, 0.4);
        assert_relative_eq!(
            m.cov_z(2.0, 2.0).unwrap().value,
            2f64.powf(0.6) / 0.6,
            max_relative = 1e-10
        );
        let m = model(0.25, 0.5);
        assert_relative_eq!(
            m.cov_z(1.0, 1.0).unwrap().value,
            beta(1.5, 0.5).unwrap(),
            max_relative = 1e-10
        );
        assert_relative_eq!(
            m.cov_y(1.0, 1.0).unwrap().value,
            m.c_var() - beta(1.5, 0.5).unwrap(),
            max_relative = 1e-10
        );
    }

    #[test]
    fn fbm_special_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for a in [-0.25, 0.0, 0.25] {
            let m = model(a, 0.0);
            let h = a + 0.5;
            let cv = fbm_variance(h);
            assert_relative_eq!(m.c_var(), cv, max_relative = 1e-10);
            for _ in 0..20 {
                let s: f64 = rng.random_range(0.01..10.0);
                let t: f64 = rng.random_range(0.01..10.0);
                let d = m.increment_var(ProcessId::X, s, t).unwrap().value;
                assert_relative_eq!(d, cv * (t - s).abs().powf(2.0 * h), max_relative = 1e-9);
                let c = m.cov_x(s, t).unwrap().value;
                let want =
                    cv * (t.powf(2.0 * h) + s.powf(2.0 * h) - (t - s).abs().powf(2.0 * h)) / 2.0;
                assert!((c - want).abs() < 1e-9, "a={a} s={s} t={t}: {c} vs {want}");
            }
        }
    }

    #[test]
    fn decomposition_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (a, g) in [(0.25, 0.5), (0.3, 0.4), (-0.1, 0.3)] {
            let m = model(a, g);
            for _ in 0..30 {
                let s: f64 = rng.random_range(0.0..10.0);
                let t: f64 = rng.random_range(0.0..10.0);
                let x = m.cov_x(s, t).unwrap().value;
                let y = m.cov_y(s, t).unwrap().value;
                let z = m.cov_z(s, t).unwrap().value;
                assert!(
                    (x - y - z).abs() < 1e-8,
                    "({a},{g}) s={s} t={t}: {x} vs {}",
                    y + z
                );
            }
        }
    }

    #[test]
    fn symmetry_is_exact() {
        let m = model(0.3, 0.4);
        for (s, t) in [(0.2, 1.7), (1.0, 1.001), (3.0, 0.5)] {
            assert_eq!(m.cov_x(s, t).unwrap().value, m.cov_x(t, s).unwrap().value);
            assert_eq!(m.cov_z(s, t).unwrap().value, m.cov_z(t, s).unwrap().value);
            assert_eq!(m.cov_y(s, t).unwrap().value, m.cov_y(t, s).unwrap().value);
        }
    }

    #[test]
    fn self_similarity() {
        let m = model(0.3, 0.4);
        let h = m.params.hurst;
        for c in [0.5, 2.0, 10.0] {
            for (s, t) in [(0.3, 1.1), (1.0, 2.5)] {
                let base = m.cov_x(s, t).unwrap().value;
                assert_relative_eq!(
                    m.cov_x(c * s, c * t).unwrap().value,
                    c.powf(2.0 * h) * base,
                    max_relative = 1e-9
                );
                let base = m.cov_z(s, t).unwrap().value;
                assert_relative_eq!(
                    m.cov_z(c * s, c * t).unwrap().value,
                    c.powf(2.0 * h) * base,
                    max_relative = 1e-9
                );
            }
        }
    }

    #[test]
    fn gram_is_positive_semidefinite() {
        use nalgebra::DMatrix;
        let m = model(0.3, 0.4);
        let n = 40;
        let pts: Vec<f64> = (1..=n).map(|i| 0.05 * i as f64).collect();
        let g = DMatrix::from_fn(n, n, |i, j| m.cov_x(pts[i], pts[j]).unwrap().value);
        let trace = g.trace();
        let eig = g.symmetric_eigen();
        assert!(eig.eigenvalues.min() >= -1e-8 * trace);
    }

    #[test]
    fn y_increment_sandwich() {
        let m = model(0.3, 0.4);
        let y_increment = m.constants().unwrap().y_increment;
        let (s, t) = (1.0f64, 1.1f64);
        let d = m.cov_y(s, s).unwrap().value + m.cov_y(t, t).unwrap().value
            - 2.0 * m.cov_y(s, t).unwrap().value;
        let two_h = 2.0 * m.params.hurst;
        assert!(y_increment * 0.01 / t.powf(2.0 - two_h) <= d);
        assert!(d <= y_increment * 0.01 / s.powf(2.0 - two_h));
        let direct = m.increment_var(ProcessId::Y, s, t).unwrap().value;
        assert_relative_eq!(direct, d, max_relative = 1e-6);
        // Beta identity for y_increment.
        assert_relative_eq!(
            y_increment,
            0.09 * beta(0.6, 0.8).unwrap(),
            max_relative = 1e-10
        );
    }

    #[test]
    fn derivative_processes() {
        let m = model(0.8, 0.7);
        assert_relative_eq!(
            m.cov_zprime(1.0, 1.0).unwrap().value,
            0.64 * beta(0.6, 0.3).unwrap(),
            max_relative = 1e-10
        );
        let m = model(0.3, 0.4);
        assert_relative_eq!(
            m.cov_yprime(1.0, 1.0).unwrap().value,
            0.09 * beta(0.6, 0.8).unwrap(),
            max_relative = 1e-10
        );
        let c12 = m.cov_yprime(1.0, 2.0).unwrap().value;
        let v1 = m.cov_yprime(1.0, 1.0).unwrap().value;
        let v2 = m.cov_yprime(2.0, 2.0).unwrap().value;
        assert!(c12 > 0.0 && c12 <= (v1 * v2).sqrt());
        assert_eq!(model(0.0, 0.4).cov_yprime(1.0, 2.0).unwrap().value, 0.0);
        assert!(matches!(
            model(0.3, 0.4).cov_zprime(1.0, 2.0),
            Err(Error::Regime(_))
        ));
    }

    #[test]
    fn zprime_is_riemann_liouville_with_shifted_index() {
        // Z' for (0.9, 0.9) has the Z kernel of (-0.1, 0.2) up to the weight.
        // Compare against direct quadrature of a^2 (t-u)^{a-1} (s-u)^{a-1} u^{-g}.
        let m = model(0.9, 0.9);
        for (s, t) in [(0.5, 1.0), (1.0, 1.3)] {
            let f = |x: Node<f64>| {
                let d = x.to_upper;
                (t - s + d).powf(-0.1) * d.powf(-0.1) * x.u.powf(-0.9)
            };
            let spec = SingularIntegral::finite(WithDistances(f), 0.0, s)
                .left(-0.9)
                .right(-0.1)
                .split_at(s / 2.0);
            let direct = integrate_finite_with(&spec, &QuadConfig::new(1e-13, 1e-13)).unwrap();
            assert_relative_eq!(
                m.cov_zprime(s, t).unwrap().value,
                0.81 * direct.value,
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn zprime_increment_band() {
        let m = model(0.8, 0.7);
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for i in 0..12 {
            let s = 0.5 + 1.4 * i as f64 / 12.0;
            for k in 2..10 {
                let t = s + 2f64.powi(-k);
                if t > 2.0 {
                    continue;
                }
                let d = m.increment_var(ProcessId::Zprime, s, t).unwrap().value;
                let r = d / (t - s).powf(0.6);
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        let d = m.increment_var(ProcessId::Zprime, 1.0, 1.05).unwrap().value;
        assert!(d >= lo * 0.05f64.powf(0.6) && d <= hi * 0.05f64.powf(0.6));
        assert!(lo > 0.0 && hi / lo < 10.0);
    }

    #[test]
    fn smooth_z_envelope() {
        let m = model(0.8, 0.7);
        let (lo, hi) = m.smooth_increment_constants(0.5, 2.0).unwrap();
        for (s, t) in [(0.5, 0.6), (1.0, 1.5), (1.9, 2.0)] {
            let d = m.increment_var(ProcessId::Z, s, t).unwrap().value;
            let h2 = (t - s) * (t - s);
            assert!(
                lo * h2 <= d && d <= hi * h2,
                "{s} {t}: {} {d} {}",
                lo * h2,
                hi * h2
            );
        }
    }

    #[test]
    fn increment_bounds_cases() {
        let bm = model(0.0, 0.0);
        let b = bm.increment_bounds(1.0, 1.5).unwrap();
        assert_eq!(b.case, IncrementCase::Near);
        assert_relative_eq!(b.actual, 0.5, max_relative = 1e-12);
        assert_relative_eq!(b.lower.unwrap(), 0.5, max_relative = 1e-12);

        let m = model(0.25, 0.5);
        let cal = m.calibrate_envelope().unwrap();
        let b = m.increment_bounds_with(1.0, 1.1, &cal).unwrap();
        assert_eq!(b.case, IncrementCase::Far);
        assert!(b.lower.unwrap() <= b.actual && b.actual <= b.upper.unwrap());
        // Same ratio s/(t-s) at another scale gives the same normalized value.
        let b2 = m.increment_bounds_with(3.0, 3.3, &cal).unwrap();
        let n1 = b.actual / (0.1f64.powf(1.5));
        let n2 = b2.actual / (0.3f64.powf(1.5) * 3f64.powf(-0.5));
        assert_relative_eq!(n1, n2, max_relative = 1e-8);
        for (s, t) in [(0.1, 1.0), (0.5, 1.0), (1.0, 4.0)] {
            let b = m.increment_bounds_with(s, t, &cal).unwrap();
            assert_eq!(b.case, IncrementCase::Near);
            assert!(b.lower.unwrap() <= b.actual && b.actual <= b.upper.unwrap());
        }
        let same = m.increment_bounds_with(1.0, 1.0, &cal).unwrap();
        assert_eq!(same.actual, 0.0);
        assert!(same.lower.is_none());

        let crit = model(0.5, 0.2);
        let cal = crit.calibrate_envelope().unwrap();
        assert!(cal.log_correction);
        let b = crit.increment_bounds_with(1.0, 1.01, &cal).unwrap();
        let shape = 1e-4 * (1.0 + 100f64.ln());
        assert!(b.actual / shape >= cal.c_lower && b.actual / shape <= cal.c_upper);
        assert!(cal.c_upper / cal.c_lower < 5.0);

        assert!(matches!(
            model(0.7, 0.8).increment_bounds(1.0, 2.0),
            Err(Error::Regime(_))
        ));
    }

    #[test]
    fn increment_ratio_limit() {
        let m = model(0.25, 0.5);
        let local_variance = m.constants().unwrap().local_variance.unwrap();
        let t = 1.5f64;
        let h = t * 2f64.powi(-14);
        let d = m.increment_var(ProcessId::Z, t - h, t).unwrap().value;
        let ratio = d / h.powf(1.5);
        assert!((ratio / (local_variance * t.powf(-0.5)) - 1.0).abs() < 0.01);
    }

    #[test]
    fn single_precision_covariance() {
        let p = GfbmParams::<f32>::validate(0.25, 0.5).unwrap();
        let m = CovarianceModel::new(p).unwrap();
        let v = m.cov_z(1.0, 1.0).unwrap().value;
        assert!((v - std::f32::consts::FRAC_PI_2).abs() < 1e-4);
        let x = m.cov_x(0.5, 1.0).unwrap().value;
        let y = m.cov_y(0.5, 1.0).unwrap().value;
        let z = m.cov_z(0.5, 1.0).unwrap().value;
        assert!((x - y - z).abs() < 1e-4);
    }
}
