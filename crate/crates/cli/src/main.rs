mod args;
mod commands;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde_json::{json, Value};
use thiserror::Error;

use args::{Cli, Command, Invocation, ReplayArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] gfbm::Error),
    #[error("{0}")]
    Usage(String),
    #[error("manifest {path}: {detail}")]
    Manifest { path: PathBuf, detail: String },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// 1 for numerical failures, 2 for everything the caller can fix.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 1,
            _ => 2,
        }
    }
}

fn write_file(path: &Path, body: &str) -> Result<(), CliError> {
    fs::write(path, body).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn manifest_path(cmd: &Command) -> Option<PathBuf> {
    let c = cmd.common();
    c.manifest.clone().or_else(|| {
        c.output.as_ref().map(|o| {
            let mut s = o.clone().into_os_string();
            s.push(".manifest.json");
            PathBuf::from(s)
        })
    })
}

fn run(cmd: &Command) -> Result<(), CliError> {
    let start = Instant::now();
    let body = commands::execute(cmd)?;
    match &cmd.common().output {
        Some(path) => write_file(path, &body)?,
        None => print!("{body}"),
    }
    let params = commands::params(cmd.common())?;
    let mut manifest = serde_json::to_value(cmd).map_err(|e| gfbm::Error::Format(e.to_string()))?;
    if let Value::Object(m) = &mut manifest {
        m.insert("params".into(), json!(params));
        m.insert("seed".into(), json!(cmd.common().seed));
        m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        m.insert("elapsed_s".into(), json!(start.elapsed().as_secs_f64()));
    }
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| gfbm::Error::Format(e.to_string()))?
        + "\n";
    match manifest_path(cmd) {
        Some(path) => write_file(&path, &text),
        None => {
            eprint!("{text}");
            Ok(())
        }
    }
}

fn load_manifest(r: &ReplayArgs) -> Result<Command, CliError> {
    let err = |detail: String| CliError::Manifest {
        path: r.manifest.clone(),
        detail,
    };
    let text = fs::read_to_string(&r.manifest).map_err(|e| err(e.to_string()))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    let tagged = json!({"command": v["command"], "options": v["options"]});
    let mut cmd: Command = serde_json::from_value(tagged).map_err(|e| err(e.to_string()))?;
    if let Some(o) = &r.output {
        let c = cmd.common_mut();
        c.output = Some(o.clone());
        c.manifest = None;
    }
    Ok(cmd)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
        {
            log::warn!("thread pool: {e}");
        }
    }
    let outcome = match &cli.command {
        Invocation::Run(cmd) => run(cmd),
        Invocation::Replay(r) => load_manifest(r).and_then(|cmd| run(&cmd)),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gfbm: error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
