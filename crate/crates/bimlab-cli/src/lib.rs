//! Experiment runner for `bimlab`: configuration, seeding, worker pools and
//! report emission for every experiment of the library.

// `!(a <= b)` style comparisons are used on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod report;

use std::path::PathBuf;
use std::time::Instant;

use bimlab::RngStream;
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

use config::{apply_override, rewrite_overrides, ConfigFile};
pub use experiments::ExperimentKind;
use report::{param_hash, write_outputs, Outcome, Report, RngInfo};

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

/// One experiment: typed parameters with defaults, a validation step and a
/// seeded run.
pub trait Experiment {
    type Params: Serialize + DeserializeOwned + Default + schemars::JsonSchema;
    const NAME: &'static str;

    fn validate(_p: &Self::Params) -> Result<(), String> {
        Ok(())
    }

    fn run(p: &Self::Params, stream: &RngStream) -> Result<Outcome, String>;
}

/// Parameters of `E` from a JSON object merged over the defaults.
pub fn resolve_params<E: Experiment>(overrides: &Map<String, Value>) -> Result<E::Params, RunError> {
    let mut base = serde_json::to_value(E::Params::default()).expect("defaults serialize");
    merge(&mut base, &Value::Object(overrides.clone()));
    let p: E::Params =
        serde_json::from_value(base).map_err(|e| RunError::Config(format!("{} parameters: {e}", E::NAME)))?;
    E::validate(&p).map_err(|e| RunError::Config(format!("{} parameters: {e}", E::NAME)))?;
    Ok(p)
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// Result of a full run before it is written out.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub report: Report,
}

/// Runs `E` with resolved parameters: returns the resolved parameter echo
/// and the outcome.
pub fn run_typed<E: Experiment>(p: &E::Params, seed: u64) -> Result<(Value, Outcome), RunError> {
    let echo = serde_json::to_value(p).expect("parameters serialize");
    let out = E::run(p, &RngStream::new(seed, 0)).map_err(RunError::Runtime)?;
    Ok((echo, out))
}

/// Builds the report for `kind` with parameter overrides, running on a pool
/// of `workers` threads.
pub fn execute(
    kind: ExperimentKind,
    params: &Map<String, Value>,
    seed: u64,
    workers: usize,
) -> Result<Report, RunError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| RunError::Runtime(format!("thread pool: {e}")))?;
    let start = Instant::now();
    let (echo, outcome) = pool.install(|| kind.run(params, seed))?;
    let config = serde_json::json!({
        "experiment": kind.name(),
        "seed": seed,
        "params": echo,
    });
    Ok(Report {
        experiment: kind.name().to_string(),
        seed,
        param_hash: param_hash(&config),
        workers,
        config,
        rng: RngInfo::new(seed),
        passed: outcome.passed(),
        metrics: outcome.metrics,
        checks: outcome.checks,
        details: outcome.details,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Parser)]
#[command(
    name = "bimlab",
    version,
    about = "Seeded experiments on Brownian intersection machinery"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write report.json and metrics.csv.
    Run(RunArgs),
    /// Print the JSON schema of an experiment's parameters, or of the config
    /// file when no experiment is given.
    Schema { experiment: Option<ExperimentKind> },
    /// Print the default parameters of an experiment.
    Defaults { experiment: ExperimentKind },
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    experiment: ExperimentKind,
    /// JSON config file with optional experiment, seed, workers and params.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads; falls back to the config file, then BIMLAB_WORKERS,
    /// then the number of cores.
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Exit with code 3 when any acceptance check fails.
    #[arg(long)]
    check: bool,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Parameter override; unknown `--name value` flags are rewritten to this.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

const KNOWN_FLAGS: [&str; 8] = ["config", "seed", "workers", "check", "out", "set", "help", "version"];

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn main_with_args(args: Vec<String>) -> i32 {
    let args = rewrite_overrides(args, &KNOWN_FLAGS);
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            if e.use_stderr() {
                eprintln!("{e}");
            } else {
                print!("{e}");
            }
            return code;
        }
    };
    match cli.command {
        Command::Schema { experiment } => {
            let schema = match experiment {
                Some(k) => k.schema(),
                None => serde_json::to_value(schemars::schema_for!(ConfigFile)).expect("schema serializes"),
            };
            println!("{}", serde_json::to_string_pretty(&schema).expect("JSON"));
            0
        }
        Command::Defaults { experiment } => {
            println!(
                "{}",
                serde_json::to_string_pretty(&experiment.defaults()).expect("JSON")
            );
            0
        }
        Command::Run(a) => match run_command(a) {
            Ok(code) => code,
            Err(e) => {
                eprintln!("bimlab: {e}");
                e.exit_code()
            }
        },
    }
}

fn run_command(a: RunArgs) -> Result<i32, RunError> {
    let file = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
            ConfigFile::parse(&text)?
        }
        None => ConfigFile::default(),
    };
    if let Some(name) = &file.experiment {
        if name != a.experiment.name() {
            return Err(RunError::Config(format!(
                "config file is for '{name}' but '{}' was requested",
                a.experiment.name()
            )));
        }
    }
    let mut params = file.params.clone().unwrap_or_default();
    for s in &a.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| RunError::Config(format!("override '{s}' is not KEY=VALUE")))?;
        apply_override(&mut params, k, v)?;
    }
    let seed = a.seed.or(file.seed).unwrap_or(1);
    let workers = match a.workers.or(file.workers) {
        Some(w) => w,
        None => match std::env::var("BIMLAB_WORKERS") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| RunError::Config(format!("BIMLAB_WORKERS='{v}' is not a worker count")))?,
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if workers == 0 {
        return Err(RunError::Config("workers must be positive".into()));
    }
    eprintln!(
        "bimlab: running {} (seed {seed}, {workers} workers)",
        a.experiment.name()
    );
    let report = execute(a.experiment, &params, seed, workers)?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("bimlab-out").join(a.experiment.name()));
    write_outputs(&out, &report).map_err(|e| RunError::Runtime(format!("writing {}: {e}", out.display())))?;
    for c in report.checks.iter().filter(|c| !c.passed) {
        eprintln!("bimlab: check '{}' failed: {}", c.name, c.detail);
    }
    let summary = serde_json::json!({
        "experiment": report.experiment,
        "seed": report.seed,
        "param_hash": report.param_hash,
        "passed": report.passed,
        "checks": report.checks.len(),
        "metrics": report.metrics.len(),
        "out": out.display().to_string(),
    });
    println!("{summary}");
    Ok(if a.check && !report.passed { EXIT_CHECK } else { 0 })
}
