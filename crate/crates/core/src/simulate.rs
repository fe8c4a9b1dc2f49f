//! Exact Gaussian simulation on finite time grids.
//!
//! Gram matrices come from [`CovEngine`], which evaluates covariances either by
//! direct quadrature or through a [`LampertiTable`]. The tabulated route uses
//! self-similarity, `cov(s, t) = (st)^H r(ln(t/s))`, and reaches table accuracy
//! (about `1e-13` relative) at a tiny fraction of the cost, which is what makes
//! grids of a few thousand points affordable.
//!
//! Paths are drawn by Cholesky factorization with a jitter ladder, by the
//! discretized white-noise integral for `Z`, or by the Durbin-Levinson
//! recursion for the stationary Lamperti process on geometric grids.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceModel, ProcessId};
use crate::error::{DomainError, Error, Result};
use crate::lamperti::{lamperti_cov, LampertiTable};
use crate::params::GfbmParams;
use crate::quadrature::{
    gauss_legendre, integrate_finite_with, QuadConfig, SingularIntegral, WithDistances,
};

/// Diagonal boosts tried in turn, as multiples of `trace / n`.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

/// Default cell width of the discretized sampler.
pub const DEFAULT_MESH: f64 = 1.0 / 4096.0;

/// Grids up to this size use direct quadrature in [`build_gram`].
pub const DIRECT_GRAM_LIMIT: usize = 96;

const BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Uniform,
    /// `t_k = t_0 q^k`.
    Geometric,
    Arbitrary,
}

/// Strictly increasing time points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    points: Vec<f64>,
    spacing: Spacing,
    /// `ln q` for geometric grids.
    log_step: Option<f64>,
}

impl TimeGrid {
    /// Validates a grid of times `>= 0`.
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.first().is_some_and(|t| *t < 0.0) {
            return Err(DomainError::arg("grid", "times must be >= 0").into());
        }
        Self::stationary(points)
    }

    /// A grid on the whole real line, used for the stationary Lamperti time axis.
    pub fn stationary(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(DomainError::arg("grid", "grid is empty").into());
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(DomainError::arg("grid", "times must be finite").into());
        }
        if let Some(w) = points.windows(2).find(|w| w[1] <= w[0]) {
            return Err(DomainError::arg(
                "grid",
                format!("times must be strictly increasing ({} then {})", w[0], w[1]),
            )
            .into());
        }
        Ok(Self {
            points,
            spacing: Spacing::Arbitrary,
            log_step: None,
        })
    }

    /// `n` equally spaced points on `[a, b]`.
    pub fn uniform(a: f64, b: f64, n: usize) -> Result<Self> {
        check_range(a, b, n)?;
        let pts = if n == 1 {
            vec![a]
        } else {
            (0..n)
                .map(|k| {
                    if k + 1 == n {
                        b
                    } else {
                        a + (b - a) * k as f64 / (n - 1) as f64
                    }
                })
                .collect()
        };
        let mut g = Self::new(pts)?;
        g.spacing = Spacing::Uniform;
        Ok(g)
    }

    /// `n` geometrically spaced points on `[a, b]`, `a > 0`.
    pub fn geometric(a: f64, b: f64, n: usize) -> Result<Self> {
        check_range(a, b, n)?;
        if !(a > 0.0) {
            return Err(DomainError::arg("grid", "geometric grids need a > 0").into());
        }
        let step = if n > 1 {
            (b / a).ln() / (n - 1) as f64
        } else {
            0.0
        };
        let pts = (0..n)
            .map(|k| {
                if k + 1 == n {
                    b
                } else {
                    a * (k as f64 * step).exp()
                }
            })
            .collect();
        let mut g = Self::new(pts)?;
        g.spacing = Spacing::Geometric;
        g.log_step = (n > 1).then_some(step);
        Ok(g)
    }

    /// Parses `a:b:n` (uniform) or `geometric:a:b:n`.
    pub fn parse(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(':').collect();
        let bad =
            || Error::InvalidInput(format!("grid `{spec}`: expected a:b:n or geometric:a:b:n"));
        let (geo, rest) = match parts.as_slice() {
            ["geometric", rest @ ..] => (true, rest),
            ["uniform", rest @ ..] => (false, rest),
            rest => (false, rest),
        };
        let [a, b, n] = rest else { return Err(bad()) };
        let a: f64 = a.trim().parse().map_err(|_| bad())?;
        let b: f64 = b.trim().parse().map_err(|_| bad())?;
        let n: usize = n.trim().parse().map_err(|_| bad())?;
        if geo {
            Self::geometric(a, b, n)
        } else {
            Self::uniform(a, b, n)
        }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn log_step(&self) -> Option<f64> {
        self.log_step
    }

    /// Index of `t` if it is a grid point.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let i = self.points.partition_point(|p| *p < t);
        (i < self.points.len() && self.points[i] == t).then_some(i)
    }

    /// Index of the grid point closest to `t`.
    pub fn nearest(&self, t: f64) -> usize {
        let i = self.points.partition_point(|p| *p < t);
        if i == 0 {
            0
        } else if i == self.points.len() {
            i - 1
        } else if (self.points[i] - t) < (t - self.points[i - 1]) {
            i
        } else {
            i - 1
        }
    }

    /// Largest gap between consecutive points.
    pub fn max_gap(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }
}

fn check_range(a: f64, b: f64, n: usize) -> Result<()> {
    if n == 0 {
        return Err(DomainError::arg("grid", "need at least one point").into());
    }
    if !(a.is_finite() && b.is_finite()) || (n > 1 && !(b > a)) {
        return Err(DomainError::arg("grid", format!("need finite a < b, got [{a}, {b}]")).into());
    }
    Ok(())
}

/// Covariance evaluator for one process.
#[derive(Debug, Clone)]
pub struct CovEngine {
    pub process: ProcessId,
    model: CovarianceModel<f64>,
    table: Option<LampertiTable>,
}

impl CovEngine {
    /// Every entry by direct quadrature.
    pub fn direct(params: &GfbmParams<f64>, process: ProcessId) -> Result<Self> {
        Ok(Self {
            process,
            model: CovarianceModel::new(*params)?,
            table: None,
        })
    }

    /// Entries from the tabulated Lamperti covariance (`X`, `Y`, `Z`, `U`).
    pub fn tabulated(params: &GfbmParams<f64>, process: ProcessId) -> Result<Self> {
        let model = CovarianceModel::new(*params)?;
        let table = LampertiTable::build(&model, process)?;
        Ok(Self {
            process,
            model,
            table: Some(table),
        })
    }

    pub fn from_table(table: LampertiTable) -> Self {
        Self {
            process: table.process,
            model: table.model().clone(),
            table: Some(table),
        }
    }

    pub fn params(&self) -> &GfbmParams<f64> {
        &self.model.params
    }

    pub fn model(&self) -> &CovarianceModel<f64> {
        &self.model
    }

    pub fn table(&self) -> Option<&LampertiTable> {
        self.table.as_ref()
    }

    fn hurst(&self) -> f64 {
        self.table.as_ref().map_or(0.0, |t| t.hurst)
    }

    /// Covariance of the process at `(s, t)`.
    pub fn cov(&self, s: f64, t: f64) -> Result<f64> {
        let Some(table) = &self.table else {
            return Ok(self.model.cov(self.process, s, t)?.value);
        };
        if self.process == ProcessId::U {
            return Ok(table.cov(t - s));
        }
        let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
        if lo < 0.0 {
            return Err(DomainError::arg("time", "times must be >= 0").into());
        }
        if lo == 0.0 {
            return Ok(0.0);
        }
        let tau = ((hi - lo) / lo).ln_1p();
        Ok((lo * hi).powf(self.hurst()) * table.cov(tau))
    }

    /// `E[(P(s + h) - P(s))^2]` for `h >= 0`.
    pub fn increment_step(&self, s: f64, h: f64) -> Result<f64> {
        let Some(table) = &self.table else {
            return Ok(self.model.increment_step(self.process, s, h)?.value);
        };
        if h == 0.0 {
            return Ok(0.0);
        }
        if self.process == ProcessId::U {
            return Ok(2.0 * table.structure(h));
        }
        let hu = self.hurst();
        if s == 0.0 {
            return Ok(table.r0 * h.powf(2.0 * hu));
        }
        let tau = (h / s).ln_1p();
        let e = (tau * hu).exp_m1();
        Ok(s.powf(2.0 * hu) * (table.r0 * e * e + 2.0 * (tau * hu).exp() * table.structure(tau)))
    }

    /// Stationary covariance of the Lamperti transform at lag `tau`.
    fn lag_cov(&self, tau: f64) -> Result<f64> {
        match &self.table {
            Some(t) => Ok(t.cov(tau)),
            None => Ok(lamperti_cov(&self.model, self.process, tau)?.value),
        }
    }
}

fn self_similar(process: ProcessId) -> bool {
    matches!(process, ProcessId::X | ProcessId::Y | ProcessId::Z)
}

/// Gram matrix of `process` on `grid`: direct quadrature for small grids, the
/// tabulated covariance otherwise.
pub fn build_gram(
    params: &GfbmParams<f64>,
    grid: &TimeGrid,
    process: ProcessId,
) -> Result<DMatrix<f64>> {
    let engine =
        if grid.len() > DIRECT_GRAM_LIMIT && (self_similar(process) || process == ProcessId::U) {
            CovEngine::tabulated(params, process)?
        } else {
            CovEngine::direct(params, process)?
        };
    build_gram_with(&engine, grid)
}

/// Gram matrix from a prepared engine. Each unordered pair is evaluated once.
pub fn build_gram_with(engine: &CovEngine, grid: &TimeGrid) -> Result<DMatrix<f64>> {
    let t = grid.points();
    let n = t.len();
    // Geometric grids only need one stationary covariance per lag.
    if let (Spacing::Geometric, Some(step), true) = (
        grid.spacing(),
        grid.log_step(),
        self_similar(engine.process),
    ) {
        let lags = (0..n)
            .into_par_iter()
            .map(|k| engine.lag_cov(k as f64 * step))
            .collect::<Result<Vec<f64>>>()?;
        let h = engine.params().hurst;
        let scale: Vec<f64> = t.iter().map(|x| x.powf(h)).collect();
        return Ok(DMatrix::from_fn(n, n, |i, j| {
            scale[i] * scale[j] * lags[i.abs_diff(j)]
        }));
    }
    let rows = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| engine.cov(t[i], t[j]))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut g = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            g[(i, i + k)] = *v;
            g[(i + k, i)] = *v;
        }
    }
    Ok(g)
}

/// Covariance of `P(center + h_i) - P(center)` over the given offsets.
pub fn increment_gram(engine: &CovEngine, center: f64, offsets: &[f64]) -> Result<DMatrix<f64>> {
    let n = offsets.len();
    let to_center = offsets
        .par_iter()
        .map(|&h| {
            if h >= 0.0 {
                engine.increment_step(center, h)
            } else {
                engine.increment_step(center + h, -h)
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let rows = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| {
                    let (a, b) = (offsets[i].min(offsets[j]), offsets[i].max(offsets[j]));
                    let d = engine.increment_step(center + a, b - a)?;
                    Ok(0.5 * (to_center[i] + to_center[j] - d))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut g = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            g[(i, i + k)] = *v;
            g[(i + k, i)] = *v;
        }
    }
    Ok(g)
}

/// Lower Cholesky factor of the positive-variance block of a Gram matrix.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    pub lower: DMatrix<f64>,
    /// Diagonal boost that made the factorization succeed.
    pub jitter: f64,
    /// Rows of the Gram matrix with positive variance; the others are identically 0.
    pub active: Vec<usize>,
    pub dim: usize,
}

/// Factorizes with the [`JITTER_LADDER`]; the first level that succeeds wins.
pub fn factorize(gram: &DMatrix<f64>) -> Result<CholeskyFactor> {
    let n = gram.nrows();
    if gram.ncols() != n {
        return Err(Error::InvalidInput("Gram matrix must be square".into()));
    }
    for i in 0..n {
        for j in 0..i {
            if gram[(i, j)] != gram[(j, i)] {
                return Err(Error::InvalidInput(format!(
                    "Gram matrix not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    if gram.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "Gram matrix has non-finite entries".into(),
        ));
    }
    let active: Vec<usize> = (0..n).filter(|&i| gram[(i, i)] != 0.0).collect();
    if let Some(&i) = active.iter().find(|&&i| gram[(i, i)] < 0.0) {
        return Err(Error::NotPsd {
            module: "simulate",
            detail: format!("negative variance {} at index {i}", gram[(i, i)]),
        });
    }
    let m = active.len();
    let sub = DMatrix::from_fn(m, m, |i, j| gram[(active[i], active[j])]);
    let mean_diag = if m > 0 { sub.trace() / m as f64 } else { 0.0 };
    for level in JITTER_LADDER {
        let jitter = level * mean_diag;
        let mut a = sub.clone();
        for i in 0..m {
            a[(i, i)] += jitter;
        }
        if let Some(c) = nalgebra::Cholesky::new(a) {
            if jitter > 0.0 {
                log::warn!("Cholesky needed jitter {jitter:e} ({level:e} x mean variance)");
            }
            return Ok(CholeskyFactor {
                lower: c.l(),
                jitter,
                active,
                dim: n,
            });
        }
    }
    Err(Error::NotPsd {
        module: "simulate",
        detail: format!(
            "Cholesky failed at every jitter level up to {:e} x mean variance",
            JITTER_LADDER[JITTER_LADDER.len() - 1]
        ),
    })
}

/// Random stream of path `index`: the seed selects the key, the index the stream.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn fill_normals(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for v in out {
        *v = StandardNormal.sample(rng);
    }
}

impl CholeskyFactor {
    /// Paths `first..first + n` as rows of a row-major `n x dim` buffer.
    pub fn sample_rows(&self, seed: u64, first: usize, n: usize) -> Vec<f64> {
        let (dim, m) = (self.dim, self.active.len());
        let mut out = vec![0.0; n * dim];
        out.par_chunks_mut(BATCH * dim.max(1))
            .enumerate()
            .for_each(|(b, chunk)| {
                let rows = chunk.len() / dim.max(1);
                if m == 0 || rows == 0 {
                    return;
                }
                let mut z = DMatrix::<f64>::zeros(m, rows);
                for (c, mut col) in z.column_iter_mut().enumerate() {
                    let mut rng = path_rng(seed, (first + b * BATCH + c) as u64);
                    fill_normals(&mut rng, col.as_mut_slice());
                }
                let y = &self.lower * z;
                for c in 0..rows {
                    let row = &mut chunk[c * dim..(c + 1) * dim];
                    for (k, &i) in self.active.iter().enumerate() {
                        row[i] = y[(k, c)];
                    }
                }
            });
        out
    }
}

/// Centered Gaussian vectors drawn through a factorized Gram matrix.
#[derive(Debug, Clone)]
pub struct GaussianSample {
    /// Row-major `n_paths x dim`.
    pub values: Vec<f64>,
    pub n_paths: usize,
    pub dim: usize,
    pub jitter: f64,
}

pub fn cholesky_sample(gram: &DMatrix<f64>, n_paths: usize, seed: u64) -> Result<GaussianSample> {
    let f = factorize(gram)?;
    Ok(GaussianSample {
        values: f.sample_rows(seed, 0, n_paths),
        n_paths,
        dim: f.dim,
        jitter: f.jitter,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    Cholesky,
    OracleDiscretized,
    /// Durbin-Levinson recursion for the Lamperti process on a geometric grid.
    Levinson,
    /// Cumulative independent increments, `alpha = 0` only.
    IndependentIncrements,
}

/// Pathwise transform applied after sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    None,
    /// `s^{2H} X(1/s)`.
    TimeInverted,
    /// `e^{-sH} Z(e^s)`.
    Lamperti,
    /// `P(t) - P(center)`.
    Increments {
        center: f64,
    },
}

/// Ensemble metadata, everything except the values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub process: ProcessId,
    pub params: GfbmParams<f64>,
    pub sampler: Sampler,
    pub seed: u64,
    pub mesh: Option<f64>,
    pub jitter: f64,
    pub transform: Transform,
}

/// Sample paths on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub meta: EnsembleMeta,
    /// Row-major `n_paths x n_points`.
    values: Vec<f64>,
}

const MAGIC: &[u8; 8] = b"GFBMENS1";

impl PathEnsemble {
    pub fn new(meta: EnsembleMeta, values: Vec<f64>) -> Result<Self> {
        if values.len() != meta.n_paths * meta.grid.len() {
            return Err(Error::InvalidInput(format!(
                "{} values for {} paths on {} points",
                values.len(),
                meta.n_paths,
                meta.grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite path value at {i}")));
        }
        Ok(Self { meta, values })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.meta.grid
    }

    pub fn times(&self) -> &[f64] {
        self.meta.grid.points()
    }

    pub fn n_paths(&self) -> usize {
        self.meta.n_paths
    }

    pub fn n_points(&self) -> usize {
        self.meta.grid.len()
    }

    pub fn path(&self, i: usize) -> &[f64] {
        let m = self.n_points();
        &self.values[i * m..(i + 1) * m]
    }

    pub fn paths(&self) -> impl Iterator<Item = &[f64]> {
        self.values
            .chunks(self.n_points().max(1))
            .take(self.n_paths())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Every value multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            meta: self.meta.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// Sample covariance `(1/n) sum x_i x_j` (the processes are centered).
    pub fn sample_cov(&self) -> DMatrix<f64> {
        let m = self.n_points();
        let n = self.n_paths();
        let x = DMatrix::from_row_slice(n, m, &self.values);
        let mut c = x.transpose() * &x;
        if n > 0 {
            c /= n as f64;
        }
        c
    }

    /// CSV with a header row of times, one path per line, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let header: Vec<String> = self.times().iter().map(|t| format!("{t:.16e}")).collect();
        s.push_str(&header.join(","));
        s.push('\n');
        for p in self.paths() {
            let row: Vec<String> = p.iter().map(|v| format!("{v:.16e}")).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    /// Columnar binary container: magic, meta length, JSON meta, then
    /// column-major little-endian `f64` values.
    pub fn to_binary(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + meta.len() + 8 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        let (n, m) = (self.n_paths(), self.n_points());
        for j in 0..m {
            for i in 0..n {
                out.extend_from_slice(&self.values[i * m + j].to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: &str| Error::Format(format!("ensemble container: {m}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(fmt("bad magic"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes
            .get(16..16 + len)
            .ok_or_else(|| fmt("truncated metadata"))?;
        let meta: EnsembleMeta = serde_json::from_slice(body).map_err(|e| fmt(&e.to_string()))?;
        let data = &bytes[16 + len..];
        let (n, m) = (meta.n_paths, meta.grid.len());
        if data.len() != 8 * n * m {
            return Err(fmt("value block has the wrong length"));
        }
        let mut values = vec![0.0; n * m];
        for (k, chunk) in data.chunks_exact(8).enumerate() {
            let (j, i) = (k / n.max(1), k % n.max(1));
            values[i * m + j] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Self::new(meta, values)
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_binary()?)?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_binary(&buf)
    }
}

fn check_paths(process: ProcessId, params: &GfbmParams<f64>) -> Result<()> {
    match process {
        ProcessId::Zprime if params.alpha <= 0.5 => Err(Error::Regime(format!(
            "Z' exists only for alpha > 1/2 (alpha = {})",
            params.alpha
        ))),
        _ => Ok(()),
    }
}

/// Exact simulation of `process` on `grid` by Cholesky factorization.
pub fn simulate(
    params: &GfbmParams<f64>,
    grid: &TimeGrid,
    process: ProcessId,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    check_paths(process, params)?;
    let gram = build_gram(params, grid, process)?;
    simulate_with_gram(params, grid, process, &gram, n_paths, seed)
}

/// As [`simulate`] with a prepared engine.
pub fn simulate_with(
    engine: &CovEngine,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    check_paths(engine.process, engine.params())?;
    let gram = build_gram_with(engine, grid)?;
    simulate_with_gram(engine.params(), grid, engine.process, &gram, n_paths, seed)
}

fn simulate_with_gram(
    params: &GfbmParams<f64>,
    grid: &TimeGrid,
    process: ProcessId,
    gram: &DMatrix<f64>,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    let s = cholesky_sample(gram, n_paths, seed)?;
    let meta = EnsembleMeta {
        grid: grid.clone(),
        n_paths,
        process,
        params: *params,
        sampler: Sampler::Cholesky,
        seed,
        mesh: None,
        jitter: s.jitter,
        transform: Transform::None,
    };
    PathEnsemble::new(meta, s.values)
}

/// Paths of `P(center + h) - P(center)` on the grid `center + offsets`, with
/// the center itself included at value 0.
pub fn simulate_increments(
    engine: &CovEngine,
    center: f64,
    offsets: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    let mut offs: Vec<f64> = offsets.iter().copied().filter(|h| *h != 0.0).collect();
    offs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    offs.dedup();
    if offs.first().is_some_and(|h| center + h <= 0.0) && engine.process != ProcessId::U {
        return Err(DomainError::arg("offsets", "window must stay inside t > 0").into());
    }
    let gram = increment_gram(engine, center, &offs)?;
    let f = factorize(&gram)?;
    let inc = f.sample_rows(seed, 0, n_paths);
    let k0 = offs.partition_point(|h| *h < 0.0);
    let mut times: Vec<f64> = offs.iter().map(|h| center + h).collect();
    times.insert(k0, center);
    let m = times.len();
    let mut values = vec![0.0; n_paths * m];
    for i in 0..n_paths {
        let src = &inc[i * offs.len()..(i + 1) * offs.len()];
        let dst = &mut values[i * m..(i + 1) * m];
        dst[..k0].copy_from_slice(&src[..k0]);
        dst[k0 + 1..].copy_from_slice(&src[k0..]);
    }
    let meta = EnsembleMeta {
        grid: TimeGrid::new(times)?,
        n_paths,
        process: engine.process,
        params: *engine.params(),
        sampler: Sampler::Cholesky,
        seed,
        mesh: None,
        jitter: f.jitter,
        transform: Transform::Increments { center },
    };
    PathEnsemble::new(meta, values)
}

/// Multiscale offsets for local statistics: for each scale `r`, steps of
/// `r / per_scale` out to `r` on both sides.
pub fn multiscale_offsets(scales: &[f64], per_scale: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for &r in scales {
        let step = r / per_scale as f64;
        for j in 1..=per_scale {
            out.push(j as f64 * step);
            out.push(-(j as f64) * step);
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out.dedup();
    out
}

/// Cell boundaries on `[0, max t]` with every grid point a boundary and widths `<= mesh`.
fn oracle_cells(times: &[f64], mesh: f64) -> Vec<f64> {
    let mut cells = vec![0.0];
    let mut prev = 0.0;
    for &t in times {
        let k = ((t - prev) / mesh).ceil().max(1.0) as usize;
        for j in 1..k {
            cells.push(prev + (t - prev) * j as f64 / k as f64);
        }
        cells.push(t);
        prev = t;
    }
    cells
}

/// Cell weights of the discretized integral for `Z`: row `j` holds
/// `sqrt(int_cell (t_j - u)^{2a} u^{-g} du)` for the cells below `t_j`.
///
/// Cells cover `[0, max t]`, have width `<= mesh` and have every grid point
/// as a boundary.
pub fn oracle_weights(
    params: &GfbmParams<f64>,
    grid: &TimeGrid,
    mesh: f64,
) -> Result<DMatrix<f64>> {
    if !(mesh > 0.0) || !mesh.is_finite() {
        return Err(DomainError::arg("mesh", format!("mesh must be positive, got {mesh}")).into());
    }
    let times = grid.points();
    if times[0] <= 0.0 {
        return Err(DomainError::arg("grid", "the discretized sampler needs t > 0").into());
    }
    let (a, g) = (params.alpha, params.gamma);
    let cells = oracle_cells(times, mesh);
    let nc = cells.len() - 1;
    let (gx, gw) = gauss_legendre(8);
    let cfg = QuadConfig::new(1e-15, 1e-12);
    let cell_var = |t: f64, k: usize| -> Result<f64> {
        let (lo, hi) = (cells[k], cells[k + 1]);
        let w = hi - lo;
        let gap = t - hi;
        if lo >= 4.0 * w && gap >= 4.0 * w {
            let (m, h) = (0.5 * (lo + hi), 0.5 * w);
            let s: f64 = gx
                .iter()
                .zip(&gw)
                .map(|(x, wi)| {
                    let u = m + h * x;
                    wi * (gap + h * (1.0 - x)).powf(2.0 * a) * u.powf(-g)
                })
                .sum();
            return Ok(s * h);
        }
        let f = |x: crate::quadrature::Node<f64>| (gap + x.to_upper).powf(2.0 * a) * x.u.powf(-g);
        let spec = SingularIntegral::finite(WithDistances(f), lo, hi)
            .left(if lo == 0.0 { -g } else { 0.0 })
            .right(if gap == 0.0 { 2.0 * a } else { 0.0 });
        Ok(integrate_finite_with(&spec, &cfg.scaled(w * lo.max(w).powf(-g)))?.value)
    };
    let m = times.len();
    let ends: Vec<usize> = times
        .iter()
        .map(|t| cells.partition_point(|c| c <= t) - 1)
        .collect();
    let rows = (0..m)
        .into_par_iter()
        .map(|j| {
            (0..ends[j])
                .map(|k| cell_var(times[j], k).map(|v| v.max(0.0).sqrt()))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut weights = DMatrix::<f64>::zeros(m, nc);
    for (j, row) in rows.iter().enumerate() {
        for (k, w) in row.iter().enumerate() {
            weights[(j, k)] = *w;
        }
    }
    Ok(weights)
}

/// Paths of `Z` from the discretized integral `sum_cells w_cell(t) xi_cell`.
///
/// Each cell weight is the square root of the exact cell variance, so
/// single-time variances are exact for any mesh; only cross-time covariances
/// carry discretization bias. The same cell noise drives every grid point.
pub fn oracle_sample_z(
    params: &GfbmParams<f64>,
    grid: &TimeGrid,
    mesh: f64,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    let weights = oracle_weights(params, grid, mesh)?;
    let (m, nc) = weights.shape();
    let mut values = vec![0.0; n_paths * m];
    values
        .par_chunks_mut(BATCH * m)
        .enumerate()
        .for_each(|(b, chunk)| {
            let rows = chunk.len() / m;
            let mut xi = DMatrix::<f64>::zeros(nc, rows);
            for (c, mut col) in xi.column_iter_mut().enumerate() {
                let mut rng = path_rng(seed, (b * BATCH + c) as u64);
                fill_normals(&mut rng, col.as_mut_slice());
            }
            let y = &weights * xi;
            for c in 0..rows {
                for j in 0..m {
                    chunk[c * m + j] = y[(j, c)];
                }
            }
        });
    let meta = EnsembleMeta {
        grid: grid.clone(),
        n_paths,
        process: ProcessId::Z,
        params: *params,
        sampler: Sampler::OracleDiscretized,
        seed,
        mesh: Some(mesh),
        jitter: 0.0,
        transform: Transform::None,
    };
    PathEnsemble::new(meta, values)
}

/// `s^{2H} X(1/s)` on the inverted grid `{1/t}`.
pub fn time_invert(ens: &PathEnsemble) -> Result<PathEnsemble> {
    if ens.meta.process != ProcessId::X || ens.meta.transform != Transform::None {
        return Err(Error::InvalidInput(
            "time inversion applies to untransformed X ensembles".into(),
        ));
    }
    let t = ens.times();
    if t[0] <= 0.0 {
        return Err(DomainError::arg("grid", "time inversion needs every t > 0").into());
    }
    let m = t.len();
    let inv: Vec<f64> = t.iter().rev().map(|x| 1.0 / x).collect();
    let h2 = 2.0 * ens.meta.params.hurst;
    let w: Vec<f64> = inv.iter().map(|s| s.powf(h2)).collect();
    let mut values = vec![0.0; ens.values.len()];
    for (src, dst) in ens.values.chunks(m).zip(values.chunks_mut(m)) {
        for j in 0..m {
            dst[j] = w[j] * src[m - 1 - j];
        }
    }
    let mut meta = ens.meta.clone();
    meta.grid = TimeGrid::new(inv)?;
    meta.transform = Transform::TimeInverted;
    PathEnsemble::new(meta, values)
}

/// `U(s) = e^{-sH} Z(e^s)` on the grid `{ln t}`.
pub fn lamperti_transform(ens: &PathEnsemble) -> Result<PathEnsemble> {
    if ens.meta.process != ProcessId::Z || ens.meta.transform != Transform::None {
        return Err(Error::InvalidInput(
            "the Lamperti transform applies to untransformed Z ensembles".into(),
        ));
    }
    let t = ens.times();
    if t[0] <= 0.0 {
        return Err(DomainError::arg("grid", "the Lamperti transform needs every t > 0").into());
    }
    let h = ens.meta.params.hurst;
    let s: Vec<f64> = t.iter().map(|x| x.ln()).collect();
    let w: Vec<f64> = t.iter().map(|x| x.powf(-h)).collect();
    let m = t.len();
    let values = ens
        .values
        .chunks(m)
        .flat_map(|p| p.iter().zip(&w).map(|(v, c)| v * c).collect::<Vec<_>>())
        .collect();
    let mut meta = ens.meta.clone();
    meta.grid = TimeGrid::stationary(s)?;
    meta.process = ProcessId::U;
    meta.transform = Transform::Lamperti;
    PathEnsemble::new(meta, values)
}

/// Durbin-Levinson prediction of a stationary sequence from its autocovariance.
struct Levinson {
    acov: Vec<f64>,
    jitter: f64,
}

impl Levinson {
    /// Innovation variances for `acov` with `acov[0]` boosted by `jitter`;
    /// `None` once the recursion loses positivity.
    fn variances(acov: &[f64], jitter: f64) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(acov.len());
        Self::run(acov, jitter, |_, _, v| {
            out.push(v);
            true
        })
        .then_some(out)
    }

    /// Runs the recursion, calling `step(k, phi_k, v_k)` with the order-`k`
    /// predictor `phi_k[j - 1]` of lag `j` and the innovation variance `v_k`.
    /// Stops early when `step` returns false or positivity is lost.
    fn run(acov: &[f64], jitter: f64, mut step: impl FnMut(usize, &[f64], f64) -> bool) -> bool {
        let n = acov.len();
        let g0 = acov[0] + jitter;
        if !(g0 > 0.0) {
            return false;
        }
        let mut phi: Vec<f64> = Vec::with_capacity(n);
        let mut prev: Vec<f64> = Vec::with_capacity(n);
        let mut v = g0;
        if !step(0, &phi, v) {
            return true;
        }
        for k in 1..n {
            let mut num = acov[k];
            for (j, p) in phi.iter().enumerate() {
                num -= p * acov[k - 1 - j];
            }
            let kappa = num / v;
            if !(kappa.abs() < 1.0) {
                return false;
            }
            prev.clear();
            prev.extend_from_slice(&phi);
            for j in 0..phi.len() {
                phi[j] = prev[j] - kappa * prev[prev.len() - 1 - j];
            }
            phi.push(kappa);
            v *= 1.0 - kappa * kappa;
            if !(v > 0.0) {
                return false;
            }
            if !step(k, &phi, v) {
                return true;
            }
        }
        true
    }

    /// First level of the [`JITTER_LADDER`] (relative to `acov[0]`) at which
    /// the recursion stays positive.
    fn new(acov: Vec<f64>) -> Result<Self> {
        for level in JITTER_LADDER {
            let jitter = level * acov[0];
            if Self::variances(&acov, jitter).is_some() {
                if jitter > 0.0 {
                    log::warn!(
                        "Levinson recursion needed jitter {jitter:e} ({level:e} x variance)"
                    );
                }
                return Ok(Self { acov, jitter });
            }
        }
        Err(Error::NotPsd {
            module: "simulate",
            detail: format!(
                "Toeplitz recursion lost positivity at every jitter level up to {:e} x variance",
                JITTER_LADDER[JITTER_LADDER.len() - 1]
            ),
        })
    }

    /// Paths `0..n_paths`, row-major. Path `p` reads its innovations from
    /// stream `p`, so values do not depend on the thread count.
    fn sample_rows(&self, seed: u64, n_paths: usize) -> Vec<f64> {
        let m = self.acov.len();
        let mut rngs: Vec<ChaCha8Rng> = (0..n_paths).map(|p| path_rng(seed, p as u64)).collect();
        // Time-major while sampling so each step reads contiguous rows.
        let mut x = vec![0.0; m * n_paths];
        let mut eps = vec![0.0; n_paths];
        Self::run(&self.acov, self.jitter, |k, phi, v| {
            for (e, rng) in eps.iter_mut().zip(rngs.iter_mut()) {
                *e = StandardNormal.sample(rng);
            }
            let sd = v.sqrt();
            let (past, rest) = x.split_at_mut(k * n_paths);
            let row = &mut rest[..n_paths];
            row.par_chunks_mut(BATCH).enumerate().for_each(|(b, out)| {
                let first = b * BATCH;
                for (j, c) in phi.iter().enumerate() {
                    let src = &past[(k - 1 - j) * n_paths + first..][..out.len()];
                    for (o, s) in out.iter_mut().zip(src) {
                        *o += c * s;
                    }
                }
                for (o, e) in out.iter_mut().zip(&eps[first..]) {
                    *o += sd * e;
                }
            });
            true
        });
        let mut values = vec![0.0; n_paths * m];
        for k in 0..m {
            for p in 0..n_paths {
                values[p * m + k] = x[k * n_paths + p];
            }
        }
        values
    }
}

/// Exact sampling of a self-similar process on a geometric grid: the grid is
/// uniform in log-time, where the Lamperti process is stationary, and the
/// Durbin-Levinson recursion factorizes its Toeplitz Gram matrix in `O(n^2)`.
/// Cost is `O(n^2)` per path and memory `O(n)` per path.
pub fn levinson_sample(
    table: &LampertiTable,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    if table.process == ProcessId::U {
        return Err(Error::InvalidInput("use a table for X, Y or Z".into()));
    }
    let step = match (grid.spacing(), grid.log_step()) {
        (Spacing::Geometric, Some(s)) => s,
        _ => {
            return Err(Error::InvalidInput(
                "Levinson sampling needs a geometric grid".into(),
            ))
        }
    };
    let acov: Vec<f64> = (0..grid.len())
        .map(|k| table.cov(k as f64 * step))
        .collect();
    let lev = Levinson::new(acov)?;
    let mut values = lev.sample_rows(seed, n_paths);
    let m = grid.len();
    let w: Vec<f64> = grid.points().iter().map(|t| t.powf(table.hurst)).collect();
    for row in values.chunks_mut(m) {
        for (v, c) in row.iter_mut().zip(&w) {
            *v *= c;
        }
    }
    let meta = EnsembleMeta {
        grid: grid.clone(),
        n_paths,
        process: table.process,
        params: *table.params(),
        sampler: Sampler::Levinson,
        seed,
        mesh: None,
        jitter: lev.jitter,
        transform: Transform::None,
    };
    PathEnsemble::new(meta, values)
}

/// Exact `O(n)` sampling when `alpha = 0`. The kernel is then `u^{-gamma/2}`
/// on `[0, t]`, `Y` vanishes and `X = Z` has independent increments with
/// variance `c_var (t^{2H} - s^{2H})`. Any grid in `t >= 0`.
pub fn increment_sample(
    params: &GfbmParams<f64>,
    grid: &TimeGrid,
    process: ProcessId,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    if params.alpha != 0.0 {
        return Err(DomainError::arg("alpha", "independent increments need alpha = 0").into());
    }
    if !matches!(process, ProcessId::X | ProcessId::Z) {
        return Err(Error::InvalidInput(format!(
            "{process:?} has no independent-increment sampler"
        )));
    }
    let times = grid.points();
    if times.first().is_some_and(|t| *t < 0.0) {
        return Err(DomainError::arg("grid", "independent increments need t >= 0").into());
    }
    let c = CovarianceModel::new(*params)?.c_var();
    let var: Vec<f64> = times
        .iter()
        .map(|t| c * t.powf(2.0 * params.hurst))
        .collect();
    let sd: Vec<f64> = var
        .iter()
        .scan(0.0, |prev, v| {
            let d = (v - *prev).max(0.0).sqrt();
            *prev = *v;
            Some(d)
        })
        .collect();
    let m = times.len();
    let mut values = vec![0.0; n_paths * m];
    values
        .par_chunks_mut(m.max(1))
        .enumerate()
        .for_each(|(p, row)| {
            let mut rng = path_rng(seed, p as u64);
            let mut acc = 0.0;
            for (v, s) in row.iter_mut().zip(&sd) {
                let e: f64 = StandardNormal.sample(&mut rng);
                acc += s * e;
                *v = acc;
            }
        });
    let meta = EnsembleMeta {
        grid: grid.clone(),
        n_paths,
        process,
        params: *params,
        sampler: Sampler::IndependentIncrements,
        seed,
        mesh: None,
        jitter: 0.0,
        transform: Transform::None,
    };
    PathEnsemble::new(meta, values)
}

/// Largest entrywise deviation of a sample covariance from `gram`, in Wick
/// standard errors `sqrt((g_ii g_jj + g_ij^2) / n)`.
pub fn max_wick_deviation(sample: &DMatrix<f64>, gram: &DMatrix<f64>, n: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let se = ((gram[(i, i)] * gram[(j, j)] + gram[(i, j)].powi(2)) / n as f64).sqrt();
            let d = (sample[(i, j)] - gram[(i, j)]).abs();
            if se > 0.0 {
                worst = worst.max(d / se);
            } else if d > 0.0 {
                return f64::INFINITY;
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::beta;
    use approx::assert_relative_eq;

    fn params(a: f64, g: f64) -> GfbmParams<f64> {
        GfbmParams::validate(a, g).unwrap()
    }

    #[test]
    fn grids() {
        let u = TimeGrid::uniform(0.25, 2.0, 8).unwrap();
        assert_eq!(u.len(), 8);
        assert_eq!(u.points()[7], 2.0);
        assert_eq!(u.spacing(), Spacing::Uniform);
        let g = TimeGrid::parse("geometric:0.001:1:31").unwrap();
        assert_eq!(g.spacing(), Spacing::Geometric);
        assert_relative_eq!(
            g.points()[10] / g.points()[0],
            10f64.powf(1.0),
            max_relative = 1e-12
        );
        assert_eq!(TimeGrid::parse("0:1:5").unwrap().points()[1], 0.25);
        assert!(TimeGrid::parse("1:0:5").is_err());
        assert!(TimeGrid::parse("geometric:0:1:5").is_err());
        assert!(TimeGrid::parse("a:b").is_err());
        assert!(TimeGrid::new(vec![1.0, 1.0]).is_err());
        assert!(TimeGrid::new(vec![-1.0, 1.0]).is_err());
        assert!(TimeGrid::stationary(vec![-1.0, 1.0]).is_ok());
        assert_eq!(u.index_of(2.0), Some(7));
        assert_eq!(u.index_of(1.9), None);
        assert_eq!(u.nearest(1.99), 7);
    }

    #[test]
    fn brownian_gram() {
        let g = TimeGrid::new(vec![1.0, 2.0, 3.0]).unwrap();
        let m = build_gram(&params(0.0, 0.0), &g, ProcessId::X).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(m[(i, j)], (i.min(j) + 1) as f64, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn single_point_variance() {
        let p = params(0.25, 0.5);
        let c = CovarianceModel::new(p).unwrap().c_var();
        let g = TimeGrid::new(vec![1.7]).unwrap();
        let m = build_gram(&p, &g, ProcessId::X).unwrap();
        assert_relative_eq!(
            m[(0, 0)],
            c * 1.7f64.powf(2.0 * p.hurst),
            max_relative = 1e-12
        );
    }

    #[test]
    fn tabulated_gram_matches_direct() {
        let p = params(0.3, 0.4);
        let g = TimeGrid::new(vec![0.0, 0.01, 0.2, 0.21, 0.5, 1.0, 1.000001, 3.0, 40.0]).unwrap();
        for proc in [ProcessId::X, ProcessId::Y, ProcessId::Z] {
            let d = build_gram_with(&CovEngine::direct(&p, proc).unwrap(), &g).unwrap();
            let t = build_gram_with(&CovEngine::tabulated(&p, proc).unwrap(), &g).unwrap();
            assert_eq!(t, t.transpose());
            for (a, b) in d.iter().zip(t.iter()) {
                assert!(
                    (a - b).abs() <= 1e-9 * (1.0 + a.abs()),
                    "{proc:?}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn geometric_shortcut_matches_pairs() {
        let p = params(0.25, 0.5);
        let g = TimeGrid::geometric(0.5, 2.0, 12).unwrap();
        let a = build_gram(&p, &g, ProcessId::Z).unwrap();
        let arb = TimeGrid::new(g.points().to_vec()).unwrap();
        let b = build_gram(&p, &arb, ProcessId::Z).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn increment_gram_matches_differences() {
        let p = params(0.25, 0.5);
        let engine = CovEngine::tabulated(&p, ProcessId::X).unwrap();
        let c = 1.0;
        let offs = [-0.1, -0.01, 0.003, 0.05];
        let inc = increment_gram(&engine, c, &offs).unwrap();
        let cov = |s: f64, t: f64| engine.cov(s, t).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let (a, b) = (c + offs[i], c + offs[j]);
                let v = cov(a, b) - cov(a, c) - cov(c, b) + cov(c, c);
                assert!((inc[(i, j)] - v).abs() < 1e-9, "{i} {j}");
            }
        }
    }

    #[test]
    fn identity_sampling() {
        let n = 100_000;
        let s = cholesky_sample(&DMatrix::identity(3, 3), n, 11).unwrap();
        let x = DMatrix::from_row_slice(n, 3, &s.values);
        let c = x.transpose() * &x / n as f64;
        let tol = 4.0 * (2.0 / n as f64).sqrt();
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((c[(i, j)] - e).abs() < tol);
            }
        }
        assert_eq!(s.jitter, 0.0);
    }

    #[test]
    fn jitter_and_failure() {
        let rank_one = DMatrix::from_element(3, 3, 1.0);
        let f = factorize(&rank_one).unwrap();
        assert!(f.jitter > 0.0);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(factorize(&bad), Err(Error::NotPsd { .. })));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(factorize(&asym).is_err());
    }

    #[test]
    fn empty_ensemble_and_origin() {
        let p = params(0.25, 0.5);
        let g = TimeGrid::new(vec![0.0, 0.5, 1.0]).unwrap();
        let e = simulate(&p, &g, ProcessId::X, 0, 1).unwrap();
        assert_eq!(e.n_paths(), 0);
        assert_eq!(e.meta.grid, g);
        let e = simulate(&p, &g, ProcessId::Z, 50, 1).unwrap();
        assert!(e.paths().all(|x| x[0] == 0.0 && x[1] != 0.0));
        assert!(simulate(&p, &g, ProcessId::Zprime, 5, 1).is_err());
    }

    #[test]
    fn reproducible_across_thread_counts() {
        let p = params(0.3, 0.4);
        let g = TimeGrid::uniform(0.5, 2.0, 20).unwrap();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate(&p, &g, ProcessId::X, 300, 42).unwrap())
        };
        let a = run(1);
        assert_eq!(a, run(3));
        assert_ne!(
            a.values(),
            simulate(&p, &g, ProcessId::X, 300, 43).unwrap().values()
        );
    }

    #[test]
    fn oracle_weights_have_exact_variance() {
        for (a, g) in [(0.25, 0.5), (0.0, 0.4), (-0.2, 0.3)] {
            let p = params(a, g);
            let grid = TimeGrid::new(vec![0.3, 1.0, 1.7]).unwrap();
            let w = oracle_weights(&p, &grid, 1.0 / 256.0).unwrap();
            let b = beta(2.0 * a + 1.0, 1.0 - g).unwrap();
            for (j, t) in grid.points().iter().enumerate() {
                let v: f64 = w.row(j).iter().map(|x| x * x).sum();
                assert_relative_eq!(v, t.powf(2.0 * a + 1.0 - g) * b, max_relative = 1e-10);
            }
        }
        // Brownian case: weights are square roots of the cell widths.
        let grid = TimeGrid::new(vec![0.5, 1.0]).unwrap();
        let w = oracle_weights(&params(0.0, 0.0), &grid, 0.1).unwrap();
        assert_relative_eq!(w[(1, 0)], 0.1f64.sqrt(), max_relative = 1e-12);
        assert_eq!(w[(0, 7)], 0.0);
        assert!(oracle_weights(&params(0.0, 0.0), &grid, 0.0).is_err());
    }

    #[test]
    fn brownian_time_inversion() {
        let p = params(0.0, 0.0);
        let g = TimeGrid::uniform(0.5, 2.0, 6).unwrap();
        let n = 20_000;
        let e = simulate(&p, &g, ProcessId::X, n, 8).unwrap();
        let inv = time_invert(&e).unwrap();
        assert_eq!(inv.meta.transform, Transform::TimeInverted);
        assert_relative_eq!(inv.times()[0], 0.5);
        let gram = DMatrix::from_fn(6, 6, |i, j| inv.times()[i].min(inv.times()[j]));
        assert!(max_wick_deviation(&inv.sample_cov(), &gram, n) < 5.0);
        let one = simulate(
            &params(0.3, 0.4),
            &TimeGrid::new(vec![1.0]).unwrap(),
            ProcessId::X,
            4,
            1,
        )
        .unwrap();
        assert_eq!(time_invert(&one).unwrap().values(), one.values());
        let zero = simulate(
            &p,
            &TimeGrid::new(vec![0.0, 1.0]).unwrap(),
            ProcessId::X,
            4,
            1,
        )
        .unwrap();
        assert!(time_invert(&zero).is_err());
    }

    #[test]
    fn lamperti_transform_at_zero() {
        let p = params(0.25, 0.5);
        let g = TimeGrid::new(vec![0.5, 1.0]).unwrap();
        let z = simulate(&p, &g, ProcessId::Z, 10, 3).unwrap();
        let u = lamperti_transform(&z).unwrap();
        assert_eq!(u.times()[1], 0.0);
        for i in 0..10 {
            assert_eq!(u.path(i)[1], z.path(i)[1]);
        }
        assert_eq!(u.meta.process, ProcessId::U);
    }

    #[test]
    fn serialization_round_trip() {
        let p = params(0.25, 0.5);
        let g = TimeGrid::uniform(0.25, 2.0, 5).unwrap();
        let e = simulate(&p, &g, ProcessId::X, 7, 2).unwrap();
        let back = PathEnsemble::from_binary(&e.to_binary().unwrap()).unwrap();
        assert_eq!(back, e);
        let csv = e.to_csv();
        let mut lines = csv.lines();
        let header: Vec<f64> = lines
            .next()
            .unwrap()
            .split(',')
            .map(|x| x.parse().unwrap())
            .collect();
        assert_eq!(header, g.points());
        let first: Vec<f64> = lines
            .next()
            .unwrap()
            .split(',')
            .map(|x| x.parse().unwrap())
            .collect();
        assert_eq!(first, e.path(0));
        assert!(PathEnsemble::from_binary(b"GFBMENS2xxxxxxxx").is_err());
    }

    #[test]
    fn levinson_sampler_reproduces_gram() {
        let p = params(0.25, 0.5);
        let model = CovarianceModel::new(p).unwrap();
        let table = LampertiTable::build(&model, ProcessId::X).unwrap();
        let g = TimeGrid::geometric(1.0, 2.0, 16).unwrap();
        let n = 20_000;
        let e = levinson_sample(&table, &g, n, 4).unwrap();
        let gram = build_gram(&p, &g, ProcessId::X).unwrap();
        assert!(max_wick_deviation(&e.sample_cov(), &gram, n) < 5.0);
        assert!(levinson_sample(&table, &TimeGrid::uniform(1.0, 2.0, 16).unwrap(), 2, 0).is_err());
    }

    #[test]
    fn levinson_matches_cholesky_factor() {
        // Both factorizations are lower triangular with positive diagonal, so
        // they coincide and identical innovations give identical paths.
        let p = params(-0.1, 0.3);
        let model = CovarianceModel::new(p).unwrap();
        let table = LampertiTable::build(&model, ProcessId::Z).unwrap();
        let g = TimeGrid::geometric(0.5, 3.0, 12).unwrap();
        let lev = levinson_sample(&table, &g, 3, 9).unwrap();
        let acov: Vec<f64> = (0..12)
            .map(|k| table.cov(k as f64 * g.log_step().unwrap()))
            .collect();
        let toeplitz = DMatrix::from_fn(12, 12, |i, j| acov[i.abs_diff(j)]);
        let chol = cholesky_sample(&toeplitz, 3, 9).unwrap();
        for (p_idx, path) in lev.paths().enumerate() {
            for (k, t) in g.points().iter().enumerate() {
                let expected = chol.values[p_idx * 12 + k] * t.powf(p.hurst);
                assert_relative_eq!(path[k], expected, epsilon = 1e-10, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn increment_sampler_reproduces_gram() {
        let p = params(0.0, 0.4);
        let g = TimeGrid::uniform(0.0, 2.0, 9).unwrap();
        let n = 20_000;
        let e = increment_sample(&p, &g, ProcessId::X, n, 2).unwrap();
        let gram = build_gram(&p, &g, ProcessId::X).unwrap();
        assert!(max_wick_deviation(&e.sample_cov(), &gram, n) < 5.0);
        assert!(increment_sample(&params(0.1, 0.4), &g, ProcessId::X, 2, 0).is_err());
        assert!(increment_sample(&p, &g, ProcessId::Y, 2, 0).is_err());
    }

    #[test]
    fn multiscale_window() {
        let o = multiscale_offsets(&[0.5, 0.25], 4);
        assert_eq!(o.len(), 12);
        assert!(o.windows(2).all(|w| w[1] > w[0]));
        assert!(!o.contains(&0.0));
    }
}
