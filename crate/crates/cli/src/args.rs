use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gfbm::covariance::ProcessId;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "gfbm",
    version,
    about = "Covariances, simulation and path statistics of generalized fractional Brownian motion"
)]
pub struct Cli {
    /// Worker threads; defaults to all available cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Invocation,
}

#[derive(Debug, Subcommand)]
pub enum Invocation {
    #[command(flatten)]
    Run(Command),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

/// A runnable command with its options. Serialized into manifests as
/// `{"command": ..., "options": {...}}`.
#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", content = "options", rename_all = "kebab-case")]
pub enum Command {
    /// Sample paths on a time grid.
    Simulate(SimulateArgs),
    /// Covariance at a pair of times, or the gram matrix of a grid.
    Cov(CovArgs),
    /// Spectral density of the stationary Lamperti transform.
    Spectrum(SpectrumArgs),
    /// Small-ball probabilities and their exponent.
    Smallball(SmallBallArgs),
    /// Local law of the iterated logarithm constants.
    Lil(LocalArgs),
    /// Chung-type liminf constants.
    Chung(LocalArgs),
    /// Uniform modulus of continuity.
    Modulus(ModulusArgs),
    /// Convergence of the rescaled increment covariance to its tangent fBm.
    Tangent(TangentArgs),
    /// Conditional variance given the past against its lower bound.
    Slnd(SlndArgs),
    /// Run the acceptance suite and summarize pass/fail as JSON.
    VerifyAll(VerifyArgs),
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Simulate(a) => &a.common,
            Command::Cov(a) => &a.common,
            Command::Spectrum(a) => &a.common,
            Command::Smallball(a) => &a.common,
            Command::Lil(a) | Command::Chung(a) => &a.common,
            Command::Modulus(a) => &a.common,
            Command::Tangent(a) => &a.common,
            Command::Slnd(a) => &a.common,
            Command::VerifyAll(a) => &a.common,
        }
    }

    pub fn common_mut(&mut self) -> &mut Common {
        match self {
            Command::Simulate(a) => &mut a.common,
            Command::Cov(a) => &mut a.common,
            Command::Spectrum(a) => &mut a.common,
            Command::Smallball(a) => &mut a.common,
            Command::Lil(a) | Command::Chung(a) => &mut a.common,
            Command::Modulus(a) => &mut a.common,
            Command::Tangent(a) => &mut a.common,
            Command::Slnd(a) => &mut a.common,
            Command::VerifyAll(a) => &mut a.common,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Process {
    X,
    Y,
    Z,
    Zprime,
    Yprime,
}

impl From<Process> for ProcessId {
    fn from(p: Process) -> Self {
        match p {
            Process::X => ProcessId::X,
            Process::Y => ProcessId::Y,
            Process::Z => ProcessId::Z,
            Process::Zprime => ProcessId::Zprime,
            Process::Yprime => ProcessId::Yprime,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct Common {
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; standard output when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Manifest file; defaults to `<output>.manifest.json`, or standard error
    /// when writing to standard output.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Cholesky,
    Levinson,
    Increments,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// `a:b:n` or `geometric:a:b:n`.
    #[arg(long)]
    pub grid: String,
    #[arg(long, default_value_t = 1)]
    pub paths: usize,
    #[arg(long, value_enum, default_value_t = Process::X)]
    pub process: Process,
    /// Levinson needs a geometric grid, increments alpha = 0; oracle samples Z only.
    #[arg(long, value_enum, default_value_t = SamplerKind::Cholesky)]
    pub sampler: SamplerKind,
    /// Cell width of the oracle sampler.
    #[arg(long, default_value_t = 1.0 / 4096.0)]
    pub mesh: f64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CovArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = Process::X)]
    pub process: Process,
    #[arg(long, requires = "t", conflicts_with = "grid")]
    pub s: Option<f64>,
    #[arg(long, requires = "s")]
    pub t: Option<f64>,
    /// Gram matrix on `a:b:n` or `geometric:a:b:n`.
    #[arg(long)]
    pub grid: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SpectrumArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 512.0)]
    pub lambda_max: f64,
    /// Add tail-mass fits over u = 4, 8, ..., 256 (JSON only).
    #[arg(long)]
    pub tail: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BallMode {
    Origin,
    Local,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SmallBallArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = Process::X)]
    pub process: Process,
    #[arg(long, value_enum, default_value_t = BallMode::Origin)]
    pub mode: BallMode,
    /// Window center in local mode.
    #[arg(long)]
    pub t_center: Option<f64>,
    /// Window length.
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    /// Decreasing thresholds, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub eps: Vec<f64>,
    /// Defaults to 100000 in origin mode and 20000 in local mode.
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long, default_value_t = 256)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 2)]
    pub doublings: usize,
    /// Report raw instead of bias-corrected probabilities in the fit.
    #[arg(long)]
    pub raw_fit: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct LocalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = Process::X)]
    pub process: Process,
    /// Centers, comma separated; two or more add a location regression.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub t_centers: Vec<f64>,
    /// Dyadic exponents `k1:k2` for r = 2^-k1 .. 2^-k2.
    #[arg(long, default_value = "4:10")]
    pub ladder: String,
    #[arg(long, default_value_t = 500)]
    pub paths: usize,
    /// Law at the origin (lil only), on a geometric grid.
    #[arg(long)]
    pub origin: bool,
    /// Grid for `--origin`.
    #[arg(long, default_value = "geometric:1e-9:0.1:4096")]
    pub origin_grid: String,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ModulusArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = Process::X)]
    pub process: Process,
    /// Independent increments when alpha = 0, otherwise Levinson on geometric
    /// grids and Cholesky on the rest.
    #[arg(long)]
    pub grid: String,
    /// `a:b`; defaults to the grid ends.
    #[arg(long)]
    pub interval: Option<String>,
    #[arg(long, default_value = "6:10")]
    pub ladder: String,
    #[arg(long, default_value_t = 200)]
    pub paths: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TangentArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = Process::X)]
    pub process: Process,
    #[arg(long)]
    pub t: f64,
    /// Scales, comma separated; defaults to 2^-2 .. 2^-8.
    #[arg(long, value_delimiter = ',')]
    pub u: Vec<f64>,
    /// Rescaled lags, comma separated; defaults to 0, 1/8, ..., 1.
    #[arg(long, value_delimiter = ',')]
    pub tau: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SlndArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub s: f64,
    #[arg(long)]
    pub t: f64,
    /// Horizon `b >= t` of the bound; defaults to `t`.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Conditioning times in `[0, s]`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub conditioning: Vec<f64>,
    /// Extra conditioning times drawn uniformly on `[0, s]` from the seed.
    #[arg(long, default_value_t = 0)]
    pub random_conditioning: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct VerifyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = BudgetArg::Fast)]
    pub budget: BudgetArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetArg {
    Fast,
    Full,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded path.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}
