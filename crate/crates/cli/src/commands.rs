use gfbm::covariance::{CovarianceModel, ProcessId};
use gfbm::lamperti::{spectral_density, standard_lambdas, tail_mass_fit, LampertiTable};
use gfbm::pathstats::{
    chung_liminf, dyadic_ladder, lil_limsup, lil_origin, local_ensemble, location_regression,
    uniform_modulus, StatReport,
};
use gfbm::simulate::{
    build_gram, increment_sample, levinson_sample, oracle_sample_z, simulate, CovEngine,
    PathEnsemble, Spacing, TimeGrid,
};
use gfbm::smallball::{estimate_with, fit_exponent, SmallBallQuery, SmallBallReport};
use gfbm::tangent::{slnd_engine, slnd_gap, tangent_cov_error, TangentQuery};
use gfbm::verify::{run_all, Budget};
use gfbm::{Error, Params};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::args::*;
use crate::CliError;

pub fn params(common: &Common) -> Result<Params, CliError> {
    let p = Params::validate(common.alpha, common.gamma).map_err(Error::from)?;
    if let Some(w) = p.near_critical_warning() {
        log::warn!("{w}");
    }
    Ok(p)
}

/// Runs `cmd` and returns the formatted output.
pub fn execute(cmd: &Command) -> Result<String, CliError> {
    let p = params(cmd.common())?;
    let format = cmd.common().format;
    match cmd {
        Command::Simulate(a) => simulate_cmd(&p, a),
        Command::Cov(a) => cov_cmd(&p, a),
        Command::Spectrum(a) => spectrum_cmd(&p, a),
        Command::Smallball(a) => smallball_cmd(&p, a),
        Command::Lil(a) => local_cmd(&p, a, false),
        Command::Chung(a) => local_cmd(&p, a, true),
        Command::Modulus(a) => modulus_cmd(&p, a),
        Command::Tangent(a) => {
            let mut q = TangentQuery::standard(a.t, a.process.into());
            if !a.u.is_empty() {
                q.u_ladder = a.u.clone();
            }
            if !a.tau.is_empty() {
                q.tau_grid = a.tau.clone();
            }
            let r = tangent_cov_error(&p, &q)?;
            render(format, || r.to_csv(), &r)
        }
        Command::Slnd(a) => slnd_cmd(&p, a),
        Command::VerifyAll(a) => {
            let budget = match a.budget {
                BudgetArg::Fast => Budget::Fast,
                BudgetArg::Full => Budget::Full,
            };
            let s = run_all(budget, a.common.seed)?;
            render(
                format,
                || {
                    let mut out = String::from("id,name,passed,elapsed_s,summary\n");
                    for r in &s.results {
                        out.push_str(&format!(
                            "{},{},{},{:.3},\"{}\"\n",
                            r.id,
                            r.name,
                            r.passed,
                            r.elapsed_s,
                            r.summary.replace('"', "'")
                        ));
                    }
                    out
                },
                &s,
            )
        }
    }
}

fn render<T: serde::Serialize>(
    format: Format,
    csv: impl FnOnce() -> String,
    value: &T,
) -> Result<String, CliError> {
    match format {
        Format::Csv => Ok(csv()),
        Format::Json => json_string(value),
    }
}

fn json_string<T: serde::Serialize + ?Sized>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// 17 significant digits.
fn exact(v: f64) -> String {
    format!("{v:.16e}")
}

fn engine(p: &Params, process: ProcessId) -> Result<CovEngine, Error> {
    match process {
        ProcessId::X | ProcessId::Y | ProcessId::Z => CovEngine::tabulated(p, process),
        _ => CovEngine::direct(p, process),
    }
}

fn table(p: &Params, process: ProcessId) -> Result<LampertiTable, Error> {
    LampertiTable::build(&CovarianceModel::new(*p)?, process)
}

fn ladder(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Usage(format!("ladder `{spec}`: expected k1:k2 with k1 < k2"));
    let (a, b) = spec.split_once(':').ok_or_else(bad)?;
    let k1: i32 = a.trim().parse().map_err(|_| bad())?;
    let k2: i32 = b.trim().parse().map_err(|_| bad())?;
    if k1 >= k2 {
        return Err(bad());
    }
    Ok(dyadic_ladder(k1, k2))
}

fn ensemble_json(ens: &PathEnsemble) -> Value {
    json!({
        "meta": ens.meta,
        "times": ens.times(),
        "paths": ens.paths().map(|p| p.to_vec()).collect::<Vec<_>>(),
    })
}

fn simulate_cmd(p: &Params, a: &SimulateArgs) -> Result<String, CliError> {
    let grid = TimeGrid::parse(&a.grid)?;
    let process: ProcessId = a.process.into();
    let seed = a.common.seed;
    let ens = match a.sampler {
        SamplerKind::Cholesky => simulate(p, &grid, process, a.paths, seed)?,
        SamplerKind::Levinson => levinson_sample(&table(p, process)?, &grid, a.paths, seed)?,
        SamplerKind::Increments => increment_sample(p, &grid, process, a.paths, seed)?,
        SamplerKind::Oracle => {
            if process != ProcessId::Z {
                return Err(CliError::Usage("the oracle sampler draws Z only".into()));
            }
            oracle_sample_z(p, &grid, a.mesh, a.paths, seed)?
        }
    };
    render(a.common.format, || ens.to_csv(), &ensemble_json(&ens))
}

fn cov_cmd(p: &Params, a: &CovArgs) -> Result<String, CliError> {
    let process: ProcessId = a.process.into();
    if let (Some(s), Some(t)) = (a.s, a.t) {
        let v = CovarianceModel::new(*p)?.cov(process, s, t)?;
        return match a.common.format {
            Format::Csv => Ok(format!("{:?}\n", v.value)),
            Format::Json => json_string(
                &json!({"s": s, "t": t, "value": exact(v.value), "abs_error": v.abs_error}),
            ),
        };
    }
    let spec = a
        .grid
        .as_ref()
        .ok_or_else(|| CliError::Usage("cov needs --s and --t, or --grid".into()))?;
    let grid = TimeGrid::parse(spec)?;
    let gram = build_gram(p, &grid, process)?;
    let m = grid.len();
    match a.common.format {
        Format::Csv => {
            let mut out = grid
                .points()
                .iter()
                .map(|t| exact(*t))
                .collect::<Vec<_>>()
                .join(",");
            out.push('\n');
            for i in 0..m {
                out.push_str(
                    &(0..m)
                        .map(|j| exact(gram[(i, j)]))
                        .collect::<Vec<_>>()
                        .join(","),
                );
                out.push('\n');
            }
            Ok(out)
        }
        Format::Json => {
            let rows: Vec<Vec<String>> = (0..m)
                .map(|i| (0..m).map(|j| exact(gram[(i, j)])).collect())
                .collect();
            let times: Vec<String> = grid.points().iter().map(|t| exact(*t)).collect();
            json_string(&json!({"process": process, "times": times, "gram": rows}))
        }
    }
}

fn spectrum_cmd(p: &Params, a: &SpectrumArgs) -> Result<String, CliError> {
    let t = spectral_density(p, &standard_lambdas(a.lambda_max))?;
    match a.common.format {
        Format::Csv => Ok(t.to_csv()),
        Format::Json if a.tail => {
            let ladder: Vec<f64> = (2..=8).map(|k| 2f64.powi(k)).collect();
            let fit = tail_mass_fit(&t, &ladder)?;
            json_string(&json!({"table": t, "tail": fit}))
        }
        Format::Json => json_string(&t),
    }
}

fn smallball_cmd(p: &Params, a: &SmallBallArgs) -> Result<String, CliError> {
    let process: ProcessId = a.process.into();
    let mut q = match a.mode {
        BallMode::Origin => {
            SmallBallQuery::origin(process, a.r, a.eps.clone(), a.paths.unwrap_or(100_000))
        }
        BallMode::Local => {
            let t = a
                .t_center
                .ok_or_else(|| CliError::Usage("local mode needs --t-center".into()))?;
            SmallBallQuery::local(process, t, a.r, a.eps.clone(), a.paths.unwrap_or(20_000))
        }
    };
    q.grid_points = a.grid_points;
    q.doublings = a.doublings;
    q.seed = a.common.seed;
    let est = estimate_with(&engine(p, process)?, &q)?;
    let fit = match fit_exponent(&est, !a.raw_fit) {
        Ok(f) => Some(f),
        Err(Error::InsufficientData(msg)) => {
            log::warn!("no exponent fit: {msg}");
            None
        }
        Err(e) => return Err(e.into()),
    };
    let report = SmallBallReport::new(&est, fit);
    render(a.common.format, || report.to_csv(), &report)
}

fn local_cmd(p: &Params, a: &LocalArgs, chung: bool) -> Result<String, CliError> {
    let r = ladder(&a.ladder)?;
    let process: ProcessId = a.process.into();
    let seed = a.common.seed;
    let mut reports: Vec<(f64, StatReport)> = Vec::new();
    if a.origin {
        if chung {
            return Err(CliError::Usage("--origin applies to lil only".into()));
        }
        let grid = TimeGrid::parse(&a.origin_grid)?;
        let ens = levinson_sample(&table(p, process)?, &grid, a.paths, seed)?;
        reports.push((0.0, lil_origin(&ens, &r)?));
    } else {
        let eng = engine(p, process)?;
        for t in &a.t_centers {
            // Common random numbers across centers.
            let ens = local_ensemble(&eng, *t, &r, a.paths, seed)?;
            let rep = if chung {
                chung_liminf(&ens, *t, &r)?
            } else {
                lil_limsup(&ens, *t, &r)?
            };
            reports.push((*t, rep));
        }
    }
    let fit = if reports.len() >= 2 {
        Some(location_regression(&reports, p.gamma)?)
    } else {
        None
    };
    match a.common.format {
        Format::Csv => {
            let mut out = String::from("t,r,mean,median,max,raw_mean\n");
            for (t, rep) in &reports {
                for line in rep.to_csv().lines().skip(1) {
                    out.push_str(&format!("{},{line}\n", exact(*t)));
                }
            }
            Ok(out)
        }
        Format::Json => {
            let rows: Vec<Value> = reports
                .iter()
                .map(|(t, r)| json!({"t": t, "report": r}))
                .collect();
            json_string(&json!({"reports": rows, "location_fit": fit}))
        }
    }
}

fn modulus_cmd(p: &Params, a: &ModulusArgs) -> Result<String, CliError> {
    let grid = TimeGrid::parse(&a.grid)?;
    let process: ProcessId = a.process.into();
    let (lo, hi) = match &a.interval {
        Some(s) => {
            let bad = || CliError::Usage(format!("interval `{s}`: expected a:b"));
            let (x, y) = s.split_once(':').ok_or_else(bad)?;
            (
                x.trim().parse().map_err(|_| bad())?,
                y.trim().parse().map_err(|_| bad())?,
            )
        }
        None => (grid.points()[0], *grid.points().last().unwrap_or(&0.0)),
    };
    let seed = a.common.seed;
    let ens = match grid.spacing() {
        _ if p.alpha == 0.0 && matches!(process, ProcessId::X | ProcessId::Z) => {
            increment_sample(p, &grid, process, a.paths, seed)?
        }
        Spacing::Geometric => levinson_sample(&table(p, process)?, &grid, a.paths, seed)?,
        _ => simulate(p, &grid, process, a.paths, seed)?,
    };
    let rep = uniform_modulus(&ens, lo, hi, &ladder(&a.ladder)?)?;
    match a.common.format {
        Format::Csv => Ok(rep.to_csv()),
        Format::Json => json_string(&rep),
    }
}

fn slnd_cmd(p: &Params, a: &SlndArgs) -> Result<String, CliError> {
    let mut cond = a.conditioning.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(a.common.seed);
    if a.s > 0.0 {
        cond.extend((0..a.random_conditioning).map(|_| rng.random_range(0.0..=a.s)));
    }
    cond.sort_by(|x, y| x.total_cmp(y));
    cond.dedup();
    let gap = slnd_gap(&slnd_engine(p)?, &cond, a.s, a.t, a.horizon.unwrap_or(a.t))?;
    render(
        a.common.format,
        || {
            format!(
                "s,t,horizon,n_conditioning,cond_var,bound,kernel_bound,variance,jitter\n{},{},{},{},{},{},{},{},{}\n",
                exact(gap.s),
                exact(gap.t),
                exact(gap.horizon),
                gap.conditioning.len(),
                exact(gap.cond_var),
                exact(gap.bound),
                exact(gap.kernel_bound),
                exact(gap.variance),
                exact(gap.jitter)
            )
        },
        &gap,
    )
}
