//! The `bss` command line: `limits`, `simulate`, `estimate`, `experiment`.
//!
//! Exit codes: 0 on success, 1 on invalid input, 2 on numerical failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{BssError, Result};
use crate::experiments::{format_f64, run, write_outputs, ExperimentConfig};
use crate::fbm_limits::{lambda_matrix, DEFAULT_LAMBDA_TOL};
use crate::hf_statistics::estimate_alpha;
use crate::limit_quantities::{pi_k_with_tol, tau_sq, DEFAULT_REL_TOL};
use crate::simulation::{
    simulate_bss, simulate_fbm, simulate_gaussian_core, GridSpec, IntermittencySpec, PathKind, PathSample,
};
use crate::weight_model::{summarize_smoothness, WeightSpec};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("BSS_BUILD_HASH"), ")");

#[derive(Debug, Parser)]
#[command(name = "bss", version = VERSION, about = "Limit theory and Monte Carlo for Brownian semi-stationary processes")]
pub struct Cli {
    /// Seed for simulation; overrides the master seed of an experiment config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Diagnostics on standard error, as text or JSON.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "text")]
    pub verbose: Option<Verbosity>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Verbosity {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Limit measure, scaling factors and the Λ matrix of a kernel.
    Limits(LimitsArgs),
    /// Simulate a path and write it as CSV.
    Simulate(SimulateArgs),
    /// Estimate the smoothness parameter from a CSV path.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo experiment from a TOML config.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct LimitsArgs {
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Also report τ_k(vΔ_n)² at this step.
    #[arg(long)]
    pub delta_n: Option<f64>,
    /// Report the Λ_k matrix instead.
    #[arg(long)]
    pub lambda: bool,
    /// Hurst index for --lambda; defaults to α + ½ of the kernel.
    #[arg(long)]
    pub hurst: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_REL_TOL)]
    pub rel_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimKind {
    Bss,
    Core,
    Fbm,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub delta_n: f64,
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 8)]
    pub kappa: usize,
    /// Kernel memory cutoff; defaults to the support end plus eight decay lengths.
    #[arg(long)]
    pub t_cut: Option<f64>,
    /// `const:c`, `trig:c0,a1,b1,...[@omega]` or `expou:kappa,xi,y0`.
    #[arg(long, default_value = "const:1")]
    pub sigma: String,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub mu: f64,
    #[arg(long, value_enum, default_value_t = SimKind::Bss)]
    pub kind: SimKind,
    /// Hurst index for --kind fbm.
    #[arg(long)]
    pub hurst: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long)]
    pub delta_n: f64,
    #[arg(long)]
    pub t: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub null_alpha: Option<f64>,
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(BssError::InvalidArgument(format!("--{name} must be positive, got {x}")))
    }
}

fn at_least_one(name: &str, x: usize) -> Result<()> {
    if x >= 1 {
        Ok(())
    } else {
        Err(BssError::InvalidArgument(format!("--{name} must be at least 1")))
    }
}

fn load_spec(path: &Path) -> Result<WeightSpec> {
    WeightSpec::from_toml_str(&std::fs::read_to_string(path)?)
}

fn require_spec(path: &Option<PathBuf>) -> Result<WeightSpec> {
    match path {
        Some(p) => load_spec(p),
        None => Err(BssError::InvalidArgument("--spec is required".into())),
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| BssError::Parse(e.to_string()))
}

#[derive(Serialize)]
struct LambdaOut {
    #[serde(rename = "H")]
    h: f64,
    k: usize,
    lambda: [[f64; 2]; 2],
    truncation_j: i64,
    tail_bound: f64,
}

#[derive(Serialize)]
struct LimitsOut {
    k: usize,
    alpha_min: f64,
    active_set: Vec<usize>,
    robustness_ok: bool,
    pi_k: BTreeMap<String, f64>,
    h_norms_sq: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    tau: Vec<crate::limit_quantities::ScalingResult>,
}

fn limits(a: &LimitsArgs) -> Result<String> {
    at_least_one("k", a.k)?;
    positive("rel-tol", a.rel_tol)?;
    if let Some(d) = a.delta_n {
        positive("delta-n", d)?;
    }
    if a.lambda {
        let h = match (a.hurst, &a.spec) {
            (Some(h), _) => h,
            (None, Some(p)) => summarize_smoothness(&load_spec(p)?)?.alpha_min + 0.5,
            (None, None) => {
                return Err(BssError::InvalidArgument("--lambda needs --hurst or --spec".into()))
            }
        };
        let l = lambda_matrix(h, a.k, a.rel_tol.min(DEFAULT_LAMBDA_TOL))?;
        return to_json(&LambdaOut {
            h,
            k: a.k,
            lambda: l.entries,
            truncation_j: l.truncation_j,
            tail_bound: l.tail_bound,
        });
    }
    let spec = require_spec(&a.spec)?;
    let summary = summarize_smoothness(&spec)?;
    let pi = pi_k_with_tol(&spec, a.k, a.rel_tol.min(1e-4))?;
    let mut tau = Vec::new();
    if let Some(d) = a.delta_n {
        for v in 1..=2 {
            tau.push(tau_sq(&spec, a.k, v, d, a.rel_tol.min(1e-4))?);
        }
    }
    to_json(&LimitsOut {
        k: a.k,
        alpha_min: summary.alpha_min,
        active_set: summary.active_set,
        robustness_ok: summary.robustness_ok,
        pi_k: pi
            .support
            .iter()
            .zip(&pi.weights)
            .map(|(t, w)| (format_f64(*t), *w))
            .collect(),
        h_norms_sq: pi.h_norms_sq,
        tau,
    })
}

/// CSV with columns `t, X, sigma`.
pub fn write_path_csv(path: &Path, p: &PathSample) -> Result<()> {
    let io = |e: csv::Error| BssError::Io(std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["t", "X", "sigma"]).map_err(io)?;
    for (i, x) in p.values.iter().enumerate() {
        let s = p
            .sigma_values
            .as_ref()
            .map(|s| format_f64(s[i]))
            .unwrap_or_default();
        w.write_record([format_f64(i as f64 * p.grid.delta_n), format_f64(*x), s])
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Read the `X` column of a path CSV.
pub fn read_path_csv(path: &Path, delta_n: f64) -> Result<PathSample> {
    let mut r = csv::Reader::from_path(path).map_err(|e| BssError::Parse(e.to_string()))?;
    let headers = r.headers().map_err(|e| BssError::Parse(e.to_string()))?.clone();
    let col = headers
        .iter()
        .position(|h| h.trim() == "X")
        .ok_or_else(|| BssError::Parse(format!("{} has no 'X' column", path.display())))?;
    let mut values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| BssError::Parse(e.to_string()))?;
        let field = rec.get(col).unwrap_or("");
        let x: f64 = field
            .trim()
            .parse()
            .map_err(|e| BssError::Parse(format!("row {}: '{field}': {e}", line + 2)))?;
        if !x.is_finite() {
            return Err(BssError::InvalidArgument(format!("row {}: non-finite value", line + 2)));
        }
        values.push(x);
    }
    if values.len() < 2 {
        return Err(BssError::InvalidArgument("path CSV needs at least two rows".into()));
    }
    let horizon = (values.len() - 1) as f64 * delta_n;
    Ok(PathSample {
        values,
        grid: GridSpec::new(delta_n, horizon, 1, 0.0),
        seed: 0,
        kind: PathKind::Bss,
        sigma_values: None,
    })
}

fn simulate(a: &SimulateArgs, seed: u64) -> Result<String> {
    positive("delta-n", a.delta_n)?;
    positive("horizon", a.horizon)?;
    at_least_one("kappa", a.kappa)?;
    if let Some(t) = a.t_cut {
        positive("t-cut", t)?;
    }
    if !a.mu.is_finite() {
        return Err(BssError::InvalidArgument("--mu must be finite".into()));
    }
    let sigma = IntermittencySpec::parse(&a.sigma)?;
    let path = match a.kind {
        SimKind::Fbm => {
            let h = a
                .hurst
                .ok_or_else(|| BssError::InvalidArgument("--kind fbm needs --hurst".into()))?;
            let n = (a.horizon / a.delta_n * (1.0 + 1e-12)).floor();
            if n > crate::simulation::MAX_OBSERVATIONS {
                return Err(BssError::ResourceGuard(format!("{n} increments requested")));
            }
            simulate_fbm(h, n as usize, a.delta_n, seed)?
        }
        kind => {
            let spec = require_spec(&a.spec)?;
            crate::weight_model::ensure_valid(&spec)?;
            let t_cut = a
                .t_cut
                .unwrap_or_else(|| spec.support_end() + 8.0 / spec.tail_rate);
            let grid = GridSpec::new(a.delta_n, a.horizon, a.kappa, t_cut);
            if kind == SimKind::Core {
                simulate_gaussian_core(&spec, &grid, seed)?
            } else {
                simulate_bss(&spec, a.mu, &sigma, &grid, seed)?
            }
        }
    };
    write_path_csv(&a.out, &path)?;
    to_json(&serde_json::json!({
        "out": a.out.display().to_string(),
        "points": path.values.len(),
        "seed": seed,
    }))
}

fn estimate(a: &EstimateArgs) -> Result<String> {
    positive("delta-n", a.delta_n)?;
    positive("t", a.t)?;
    at_least_one("k", a.k)?;
    let spec = a.spec.as_deref().map(load_spec).transpose()?;
    if let Some(s) = &spec {
        crate::weight_model::ensure_valid(s)?;
    }
    let path = read_path_csv(&a.input, a.delta_n)?;
    to_json(&estimate_alpha(&path, a.k, a.t, spec.as_ref(), a.null_alpha)?)
}

fn experiment(a: &ExperimentArgs, seed: Option<u64>) -> Result<String> {
    let mut cfg = ExperimentConfig::from_file(&a.config)?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    let dir = a
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| BssError::InvalidArgument("--out is required when the config has no output".into()))?;
    cfg.validate()?;
    let out = run(&cfg)?;
    write_outputs(&dir, &out)?;
    to_json(&serde_json::json!({
        "report": dir.join("report.json").display().to_string(),
        "replications_csv": dir.join("replications.csv").display().to_string(),
        "flags": out.report.flags,
    }))
}

fn error_kind(e: &BssError) -> &'static str {
    match e {
        BssError::InvalidArgument(_) => "invalid_argument",
        BssError::InvalidSpec(_) => "invalid_spec",
        BssError::Precondition { .. } => "precondition",
        BssError::Quadrature { .. } => "quadrature",
        BssError::InOperation { source, .. } => error_kind(source),
        BssError::NonFiniteIntegrand => "non_finite_integrand",
        BssError::NotPositiveDefinite { .. } => "not_positive_definite",
        BssError::SeriesTail { .. } => "series_tail",
        BssError::Degenerate(_) => "degenerate",
        BssError::ResourceGuard(_) => "resource_guard",
        BssError::Replication { source, .. } => error_kind(source),
        BssError::Io(_) => "io",
        BssError::Parse(_) => "parse",
    }
}

fn diagnostics(e: &BssError) -> Option<&[crate::weight_model::Diagnostic]> {
    match e {
        BssError::InvalidSpec(d) => Some(d),
        BssError::InOperation { source, .. } | BssError::Replication { source, .. } => diagnostics(source),
        _ => None,
    }
}

pub fn exit_code(e: &BssError) -> i32 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

fn report_error<W: Write>(err: &mut W, e: &BssError, verbose: Option<Verbosity>) {
    if verbose == Some(Verbosity::Json) {
        let v = serde_json::json!({
            "error": error_kind(e),
            "message": e.to_string(),
            "operation": e.operation(),
            "diagnostics": diagnostics(e),
            "exit_code": exit_code(e),
        });
        let _ = writeln!(err, "{v}");
    } else {
        let _ = match diagnostics(e) {
            Some(d) => {
                let _ = writeln!(err, "error: weight function failed validation");
                d.iter().try_for_each(|d| writeln!(err, "  - {d}"))
            }
            None => writeln!(err, "error: {e}"),
        };
    }
}

fn execute(cli: &Cli) -> Result<String> {
    if let Some(t) = cli.threads {
        at_least_one("threads", t)?;
        #[cfg(feature = "parallel")]
        {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
        }
    }
    match &cli.command {
        Command::Limits(a) => limits(a),
        Command::Simulate(a) => simulate(a, cli.seed.unwrap_or(0)),
        Command::Estimate(a) => estimate(a),
        Command::Experiment(a) => experiment(a, cli.seed),
    }
}

/// Run the command line with explicit output streams; returns the exit code.
pub fn dispatch_with<I, T, O, E>(argv: I, out: &mut O, err: &mut E) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    O: Write,
    E: Write,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match execute(&cli) {
        Ok(s) => {
            let _ = writeln!(out, "{s}");
            0
        }
        Err(e) => {
            report_error(err, &e, cli.verbose);
            exit_code(&e)
        }
    }
}

pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    dispatch_with(argv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}
