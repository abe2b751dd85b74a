//! Monte Carlo checks of the limit theorems: law of large numbers, central
//! limit theorem, interval coverage of the feasible statistic, and a direct
//! check of the `Λ_k` matrix on fractional Brownian motion.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{BssError, Result};
use crate::fbm_limits::{fbm_filter_variance, lambda_matrix, LambdaMatrix, DEFAULT_LAMBDA_TOL};
use crate::hf_statistics::{estimate_alpha, limit_qv, qq_of, qv_of, tau_sq_for};
use crate::limit_quantities::pi_k;
use crate::quadrature::{integrate, QuadOptions};
use crate::simulation::{
    derive_seed, fbm_from_increments, fgn_sampler, gaussian_core_sampler, rng_from_seed, GridSpec,
    IntermittencySpec, PathKind, PathSample, RiemannScheme, StationarySampler,
};
use crate::weight_model::{ensure_valid, summarize_smoothness, WeightSpec};

/// Terms of the Kolmogorov series.
const KS_TERMS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Lln,
    Clt,
    Coverage,
    LambdaCheck,
}

fn default_sigma() -> IntermittencySpec {
    IntermittencySpec::Constant { c: 1.0 }
}
fn default_horizon() -> f64 {
    1.0
}
fn default_refinement() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Inline kernel; takes precedence over `spec_path`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<WeightSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_path: Option<PathBuf>,
    #[serde(default = "default_sigma")]
    pub sigma: IntermittencySpec,
    #[serde(default)]
    pub mu: f64,
    pub k: usize,
    pub delta_ladder: Vec<f64>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    pub replications: usize,
    pub master_seed: u64,
    /// Inner sub-steps of the Riemann scheme (non-constant σ only).
    #[serde(default = "default_refinement")]
    pub refinement: usize,
    /// Kernel memory cutoff; defaults to the support end plus eight decay lengths.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<f64>,
    #[serde(default)]
    pub use_asymptotic_tau: bool,
    /// Hurst index for the Λ check; defaults to `α + ½` of the kernel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hurst: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| BssError::Parse(e.to_string()))
    }

    /// Load a config, resolving `spec_path` relative to the file and inlining it.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        if cfg.spec.is_none() {
            if let Some(p) = &cfg.spec_path {
                let full = match path.parent() {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p.clone(),
                };
                cfg.spec = Some(WeightSpec::from_toml_str(&std::fs::read_to_string(full)?)?);
            }
        }
        Ok(cfg)
    }

    pub fn weight_spec(&self) -> Result<&WeightSpec> {
        self.spec.as_ref().ok_or_else(|| {
            BssError::InvalidArgument("experiment config has no kernel (spec or spec_path)".into())
        })
    }

    pub fn truncation_for(&self, spec: &WeightSpec) -> f64 {
        self.truncation
            .unwrap_or_else(|| spec.support_end() + 8.0 / spec.tail_rate)
    }

    /// Range checks plus the theorem hypotheses for the CLT-type kinds.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BssError::InvalidArgument(m));
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.delta_ladder.is_empty() {
            return bad("delta_ladder is empty".into());
        }
        if let Some(d) = self.delta_ladder.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
            return bad(format!("delta_n must be positive, got {d}"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if !self.mu.is_finite() {
            return bad("mu must be finite".into());
        }
        self.sigma.check()?;
        if let Some(h) = self.hurst {
            if !(h > 0.0 && h < 1.0) {
                return bad(format!("hurst must lie in (0, 1), got {h}"));
            }
        }
        if self.kind == ExperimentKind::LambdaCheck && self.hurst.is_some() {
            if !(1..=crate::weight_model::MAX_FILTER_ORDER).contains(&self.k) {
                return bad(format!("k = {} out of range", self.k));
            }
            return Ok(());
        }
        let spec = self.weight_spec()?;
        ensure_valid(spec)?;
        if self.k == 0 || self.k > spec.max_filter_order {
            return bad(format!(
                "k = {} must lie in 1..={} for this kernel",
                self.k, spec.max_filter_order
            ));
        }
        if matches!(self.kind, ExperimentKind::Clt | ExperimentKind::Coverage) {
            if !self.sigma.clt_compliant() {
                return bad("CLT-type experiments need a constant or deterministic sigma".into());
            }
            if let Some(gap) = spec.min_spacing() {
                if self.horizon >= gap {
                    return bad(format!(
                        "horizon {} must be below the minimal singularity spacing {gap}",
                        self.horizon
                    ));
                }
            }
            if !spec.is_singular() {
                return bad("CLT-type experiments need a singular kernel".into());
            }
            if self.k == 1 {
                if let Some(s) = spec.segments.iter().find(|s| s.alpha >= 0.0) {
                    return bad(format!("k = 1 needs every exponent negative, found {}", s.alpha));
                }
            }
        }
        Ok(())
    }
}

/// Mean and spread of one statistic at one rung.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub statistic: String,
    pub delta_n: f64,
    pub v: usize,
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub se: f64,
    pub target: Option<f64>,
    pub bias: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsRow {
    pub statistic: String,
    pub delta_n: f64,
    pub v: usize,
    pub target_variance: f64,
    pub ks_statistic: f64,
    pub p_value: f64,
    pub passed_1pct: bool,
}

/// Empirical covariance entry of the pair of normalised statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovRow {
    pub delta_n: f64,
    pub entry: [usize; 2],
    pub empirical: f64,
    pub theory: f64,
    pub se: f64,
    pub within_3se: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub delta_n: f64,
    pub n: usize,
    pub coverage: f64,
    pub binomial_se: f64,
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub master_seed: u64,
    pub seed_rule: String,
    pub version: String,
    pub build: String,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub config: ExperimentConfig,
    pub rows: Vec<StatRow>,
    pub ks: Vec<KsRow>,
    pub covariance: Vec<CovRow>,
    pub coverage: Vec<CoverageRow>,
    /// `Λ_k` used for the theoretical covariance, when one applies.
    pub lambda: Option<LambdaMatrix>,
    /// Whether |bias| is nonincreasing along the ladder up to 2 SE of slack.
    pub bias_monotone: Option<bool>,
    pub flags: Vec<String>,
    pub metadata: Metadata,
}

impl ExperimentReport {
    pub fn row(&self, statistic: &str, delta_n: f64, v: usize) -> Option<&StatRow> {
        self.rows
            .iter()
            .find(|r| r.statistic == statistic && r.delta_n == delta_n && r.v == v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub delta_n: f64,
    pub v: usize,
    pub statistic_value: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub records: Vec<ReplicationRecord>,
    pub wall_time_seconds: f64,
}

/// Seed of replication `rep` at ladder rung `rung`.
pub fn replication_seed(master: u64, rep: usize, rung: usize) -> u64 {
    derive_seed(derive_seed(master, rep as u64), rung as u64)
}

const SEED_RULE: &str = "derive_seed(derive_seed(master_seed, rep), rung)";

/// One-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> Result<(f64, f64)> {
    if sample.len() < 8 {
        return Err(BssError::InvalidArgument(format!(
            "KS test needs at least 8 observations, got {}",
            sample.len()
        )));
    }
    if sample.iter().any(|x| x.is_nan()) {
        return Err(BssError::InvalidArgument("KS sample contains NaN".into()));
    }
    let mut s = sample.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok((d, kolmogorov_sf(n.sqrt() * d)))
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for j in 1..=KS_TERMS {
        let j = j as f64;
        let sign = if j as usize % 2 == 1 { 1.0 } else { -1.0 };
        s += sign * (-2.0 * j * j * lambda * lambda).exp();
    }
    (2.0 * s).clamp(0.0, 1.0)
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = if x.len() > 1 {
        x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, v)
}

fn covariance(x: &[f64], y: &[f64]) -> f64 {
    let (mx, _) = mean_var(x);
    let (my, _) = mean_var(y);
    let n = x.len() as f64;
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (n - 1.0)
}

fn stat_row(name: &str, delta_n: f64, v: usize, x: &[f64], target: Option<f64>) -> StatRow {
    let (mean, variance) = mean_var(x);
    StatRow {
        statistic: name.into(),
        delta_n,
        v,
        n: x.len(),
        mean,
        variance,
        se: (variance / x.len() as f64).sqrt(),
        target,
        bias: target.map(|t| mean - t),
    }
}

fn metadata(cfg: &ExperimentConfig) -> Metadata {
    Metadata {
        master_seed: cfg.master_seed,
        seed_rule: SEED_RULE.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        build: env!("BSS_BUILD_HASH").into(),
        replications: cfg.replications,
    }
}

/// Run `f(rep)` for every replication, in parallel when enabled, returning
/// results in replication order.
fn replicate<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Path generator for one rung: exact for constant σ, Riemann otherwise.
enum PathSource {
    Exact {
        sampler: StationarySampler,
        mu: f64,
        c: f64,
        grid: GridSpec,
    },
    Riemann {
        scheme: RiemannScheme,
        mu: f64,
        sigma: IntermittencySpec,
    },
}

impl PathSource {
    fn new(cfg: &ExperimentConfig, spec: &WeightSpec, delta_n: f64) -> Result<Self> {
        let grid = GridSpec::new(delta_n, cfg.horizon, cfg.refinement, cfg.truncation_for(spec));
        grid.validate_for(spec)?;
        Ok(match &cfg.sigma {
            IntermittencySpec::Constant { c } => PathSource::Exact {
                sampler: gaussian_core_sampler(spec, delta_n, grid.n_points())?,
                mu: cfg.mu,
                c: *c,
                grid,
            },
            s => PathSource::Riemann {
                scheme: RiemannScheme::new(spec, &grid)?,
                mu: cfg.mu,
                sigma: s.clone(),
            },
        })
    }

    fn path(&self, seed: u64) -> PathSample {
        match self {
            PathSource::Exact { sampler, mu, c, grid } => {
                let g = sampler.sample(&mut rng_from_seed(seed));
                PathSample {
                    values: g.iter().map(|x| mu + c * x).collect(),
                    grid: *grid,
                    seed,
                    kind: PathKind::Bss,
                    sigma_values: None,
                }
            }
            PathSource::Riemann { scheme, mu, sigma } => scheme.simulate(*mu, sigma, seed),
        }
    }
}

/// `∫_0^t (∫ σ²_{s−θ} π_k(dθ))² ds`, the time integral of the conditional
/// variance factor.
fn variance_factor(spec: &WeightSpec, sigma: &IntermittencySpec, k: usize, t: f64) -> Result<f64> {
    if let IntermittencySpec::Constant { c } = sigma {
        return Ok(c.powi(4) * t);
    }
    let pi = pi_k(spec, k)?;
    let q = integrate(
        |s| {
            let m: f64 = pi
                .support
                .iter()
                .zip(&pi.weights)
                .map(|(&th, &w)| {
                    let x = sigma.eval(s - th).unwrap_or(0.0);
                    w * x * x
                })
                .sum();
            m * m
        },
        0.0,
        t,
        &QuadOptions::with_rel_tol(1e-10),
    )
    .map_err(|e| e.in_op("variance_factor"))?;
    Ok(q.value)
}

fn lln_limit(spec: &WeightSpec, cfg: &ExperimentConfig) -> Result<Option<f64>> {
    match &cfg.sigma {
        IntermittencySpec::Constant { c } => Ok(Some(c * c * cfg.horizon)),
        IntermittencySpec::ExpOu { .. } => Ok(None),
        s => limit_qv(spec, s, cfg.k, cfg.horizon).map(Some),
    }
}

fn replication_error(rep: usize, seed: u64) -> impl FnOnce(BssError) -> BssError {
    move |e| BssError::Replication {
        replication: rep,
        seed,
        source: Box::new(e),
    }
}

fn bias_monotone(rows: &[StatRow]) -> Option<bool> {
    let mut ok = true;
    for w in rows.windows(2) {
        let (a, b) = (w[0].bias?, w[1].bias?);
        if b.abs() > a.abs() + 2.0 * (w[0].se * w[0].se + w[1].se * w[1].se).sqrt() {
            ok = false;
        }
    }
    Some(ok)
}

fn empty_report(cfg: &ExperimentConfig) -> ExperimentReport {
    ExperimentReport {
        kind: cfg.kind,
        config: cfg.clone(),
        rows: Vec::new(),
        ks: Vec::new(),
        covariance: Vec::new(),
        coverage: Vec::new(),
        lambda: None,
        bias_monotone: None,
        flags: Vec::new(),
        metadata: metadata(cfg),
    }
}

/// Scaled quadratic variations at `v = 1, 2` for every replication of each rung.
struct ScaledRuns {
    per_rung: Vec<(f64, [Vec<f64>; 2], Vec<u64>)>,
}

fn scaled_runs(cfg: &ExperimentConfig, spec: &WeightSpec) -> Result<ScaledRuns> {
    let k = cfg.k;
    let mut per_rung = Vec::new();
    for (rung, &delta_n) in cfg.delta_ladder.iter().enumerate() {
        let source = PathSource::new(cfg, spec, delta_n)?;
        let tau = [
            tau_sq_for(spec, k, 1, delta_n, cfg.use_asymptotic_tau)?,
            tau_sq_for(spec, k, 2, delta_n, cfg.use_asymptotic_tau)?,
        ];
        let out = replicate(cfg.replications, |rep| {
            let seed = replication_seed(cfg.master_seed, rep, rung);
            let p = source.path(seed);
            let mut s = [0.0; 2];
            for v in 1..=2 {
                let q = qv_of(&p.values, delta_n, k, v, false).map_err(replication_error(rep, seed))?;
                s[v - 1] = delta_n / tau[v - 1] * q.value;
            }
            Ok((s, seed))
        });
        let out: Vec<([f64; 2], u64)> = out.into_iter().collect::<Result<_>>()?;
        per_rung.push((
            delta_n,
            [
                out.iter().map(|(s, _)| s[0]).collect(),
                out.iter().map(|(s, _)| s[1]).collect(),
            ],
            out.iter().map(|(_, seed)| *seed).collect(),
        ));
    }
    Ok(ScaledRuns { per_rung })
}

fn push_records(records: &mut Vec<ReplicationRecord>, delta_n: f64, v: usize, values: &[f64], seeds: &[u64]) {
    for (rep, (&x, &seed)) in values.iter().zip(seeds).enumerate() {
        records.push(ReplicationRecord {
            rep,
            delta_n,
            v,
            statistic_value: x,
            seed,
        });
    }
}

fn timed<F: FnOnce() -> Result<(ExperimentReport, Vec<ReplicationRecord>)>>(f: F) -> Result<ExperimentOutput> {
    let start = std::time::Instant::now();
    let (report, records) = f()?;
    Ok(ExperimentOutput {
        report,
        records,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Mean ± SE of the scaled quadratic variation against the LLN limit at each rung.
pub fn run_lln(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    timed(|| {
        let spec = cfg.weight_spec()?;
        let limit = lln_limit(spec, cfg)?;
        let runs = scaled_runs(cfg, spec)?;
        let mut report = empty_report(cfg);
        let mut records = Vec::new();
        if limit.is_none() {
            report
                .flags
                .push("limit is random for this sigma; bias not reported".into());
        }
        for (delta_n, vals, seeds) in &runs.per_rung {
            for v in 1..=2 {
                report
                    .rows
                    .push(stat_row("scaled_qv", *delta_n, v, &vals[v - 1], limit));
                push_records(&mut records, *delta_n, v, &vals[v - 1], seeds);
            }
        }
        let v1: Vec<StatRow> = report.rows.iter().filter(|r| r.v == 1).cloned().collect();
        report.bias_monotone = bias_monotone(&v1);
        Ok((report, records))
    })
}

fn insufficient(report: &mut ExperimentReport, n: usize) -> bool {
    if n < 8 {
        report.flags.push(format!(
            "insufficient sample: {n} replications, no test performed"
        ));
        true
    } else {
        false
    }
}

fn ks_row(name: &str, delta_n: f64, v: usize, x: &[f64], var: f64) -> Result<KsRow> {
    let sd = var.sqrt();
    let normal = Normal::new(0.0, sd).map_err(|e| BssError::InvalidArgument(e.to_string()))?;
    let (d, p) = ks_statistic(x, |z| normal.cdf(z))?;
    Ok(KsRow {
        statistic: name.into(),
        delta_n,
        v,
        target_variance: var,
        ks_statistic: d,
        p_value: p,
        passed_1pct: p > 0.01,
    })
}

/// Empirical 2×2 covariance of `(a, b)` against `theory`, with normal-theory SEs.
fn covariance_check(delta_n: f64, a: &[f64], b: &[f64], theory: [[f64; 2]; 2]) -> Vec<CovRow> {
    let n = a.len() as f64;
    let emp = [
        [covariance(a, a), covariance(a, b)],
        [covariance(a, b), covariance(b, b)],
    ];
    let mut out = Vec::new();
    for (i, j) in [(0, 0), (0, 1), (1, 1)] {
        let t = theory[i][j];
        let se = ((theory[i][i] * theory[j][j] + t * t) / n).sqrt();
        out.push(CovRow {
            delta_n,
            entry: [i + 1, j + 1],
            empirical: emp[i][j],
            theory: t,
            se,
            within_3se: (emp[i][j] - t).abs() <= 3.0 * se,
        });
    }
    out
}

/// `Δ_n^{−1/2}(scaled QV − limit)` at `v = 1, 2` against the Gaussian limit.
pub fn run_clt(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    timed(|| {
        let spec = cfg.weight_spec()?;
        let alpha = summarize_smoothness(spec)?.alpha_min;
        let lambda = lambda_matrix(alpha + 0.5, cfg.k, DEFAULT_LAMBDA_TOL)?;
        let limit = limit_qv(spec, &cfg.sigma, cfg.k, cfg.horizon)?;
        let factor = variance_factor(spec, &cfg.sigma, cfg.k, cfg.horizon)?;
        let theory = [
            [factor * lambda.entries[0][0], factor * lambda.entries[0][1]],
            [factor * lambda.entries[1][0], factor * lambda.entries[1][1]],
        ];
        let runs = scaled_runs(cfg, spec)?;
        let mut report = empty_report(cfg);
        report.lambda = Some(lambda);
        let mut records = Vec::new();
        let small = insufficient(&mut report, cfg.replications);
        for (delta_n, vals, seeds) in &runs.per_rung {
            let root = delta_n.sqrt();
            let z: Vec<Vec<f64>> = vals
                .iter()
                .map(|x| x.iter().map(|s| (s - limit) / root).collect())
                .collect();
            for v in 1..=2 {
                report
                    .rows
                    .push(stat_row("clt", *delta_n, v, &z[v - 1], Some(0.0)));
                push_records(&mut records, *delta_n, v, &z[v - 1], seeds);
                if !small {
                    report
                        .ks
                        .push(ks_row("clt", *delta_n, v, &z[v - 1], theory[v - 1][v - 1])?);
                }
            }
            if !small {
                report
                    .covariance
                    .extend(covariance_check(*delta_n, &z[0], &z[1], theory));
            }
        }
        Ok((report, records))
    })
}

/// Coverage of the 95% interval for `α`, the feasible statistic's law, and the
/// quarticity limit.
pub fn run_coverage(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    timed(|| {
        let spec = cfg.weight_spec()?;
        let alpha = summarize_smoothness(spec)?.alpha_min;
        let qq_target = 3.0 * variance_factor(spec, &cfg.sigma, cfg.k, cfg.horizon)?;
        let mut report = empty_report(cfg);
        let mut records = Vec::new();
        let small = insufficient(&mut report, cfg.replications);
        for (rung, &delta_n) in cfg.delta_ladder.iter().enumerate() {
            let source = PathSource::new(cfg, spec, delta_n)?;
            let tau = tau_sq_for(spec, cfg.k, 1, delta_n, cfg.use_asymptotic_tau)?;
            let out = replicate(cfg.replications, |rep| {
                let seed = replication_seed(cfg.master_seed, rep, rung);
                let p = source.path(seed);
                let e = estimate_alpha(&p, cfg.k, cfg.horizon, Some(spec), Some(alpha))
                    .map_err(replication_error(rep, seed))?;
                let qq = qq_of(&p.values, cfg.k, 1).map_err(replication_error(rep, seed))?;
                Ok((e, delta_n * qq / (tau * tau), seed))
            });
            let out: Vec<_> = out.into_iter().collect::<Result<_>>()?;
            let n = out.len();
            let covered = out
                .iter()
                .filter(|(e, _, _)| e.ci_95[0] <= alpha && alpha <= e.ci_95[1])
                .count();
            let p = covered as f64 / n as f64;
            report.coverage.push(CoverageRow {
                delta_n,
                n,
                coverage: p,
                binomial_se: (p * (1.0 - p) / n as f64).sqrt(),
                clamped: out.iter().filter(|(e, _, _)| e.clamped).count(),
            });
            let alphas: Vec<f64> = out.iter().map(|(e, _, _)| e.alpha_hat).collect();
            let t: Vec<f64> = out.iter().map(|(e, _, _)| e.t_stat.unwrap_or(f64::NAN)).collect();
            let qq: Vec<f64> = out.iter().map(|(_, q, _)| *q).collect();
            let seeds: Vec<u64> = out.iter().map(|(_, _, s)| *s).collect();
            report.rows.push(stat_row("alpha_hat", delta_n, 1, &alphas, Some(alpha)));
            report.rows.push(stat_row("feasible_t", delta_n, 1, &t, Some(0.0)));
            report.rows.push(stat_row("scaled_qq", delta_n, 1, &qq, Some(qq_target)));
            push_records(&mut records, delta_n, 1, &t, &seeds);
            if !small {
                report.ks.push(ks_row("feasible_t", delta_n, 1, &t, 1.0)?);
            }
        }
        Ok((report, records))
    })
}

/// Sample covariance of normalised fBm quadratic variations against `t·Λ_k`.
pub fn run_lambda_check(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    timed(|| {
        let h = match cfg.hurst {
            Some(h) => h,
            None => summarize_smoothness(cfg.weight_spec()?)?.alpha_min + 0.5,
        };
        let k = cfg.k;
        let lambda = lambda_matrix(h, k, DEFAULT_LAMBDA_TOL)?;
        let t = cfg.horizon;
        let theory = [
            [t * lambda.entries[0][0], t * lambda.entries[0][1]],
            [t * lambda.entries[1][0], t * lambda.entries[1][1]],
        ];
        let unit = [fbm_filter_variance(h, k, 1)?, fbm_filter_variance(h, k, 2)?];
        let mut report = empty_report(cfg);
        report.lambda = Some(lambda);
        let mut records = Vec::new();
        let small = insufficient(&mut report, cfg.replications);
        for (rung, &delta_n) in cfg.delta_ladder.iter().enumerate() {
            let n_inc = (t / delta_n).round() as usize;
            if n_inc as f64 > crate::simulation::MAX_OBSERVATIONS {
                return Err(BssError::ResourceGuard(format!("{n_inc} increments requested")));
            }
            let sampler = fgn_sampler(h, n_inc)?;
            let root = delta_n.sqrt();
            let out = replicate(cfg.replications, |rep| {
                let seed = replication_seed(cfg.master_seed, rep, rung);
                let inc = sampler.sample(&mut rng_from_seed(seed));
                let p = fbm_from_increments(&inc, h, delta_n, seed);
                let mut z = [0.0; 2];
                for v in 1..=2 {
                    let q = qv_of(&p.values, delta_n, k, v, false).map_err(replication_error(rep, seed))?;
                    let tau = delta_n.powf(2.0 * h) * unit[v - 1];
                    z[v - 1] = (delta_n * q.value / tau - t) / root;
                }
                Ok((z, seed))
            });
            let out: Vec<([f64; 2], u64)> = out.into_iter().collect::<Result<_>>()?;
            let z: [Vec<f64>; 2] = [
                out.iter().map(|(z, _)| z[0]).collect(),
                out.iter().map(|(z, _)| z[1]).collect(),
            ];
            let seeds: Vec<u64> = out.iter().map(|(_, s)| *s).collect();
            for v in 1..=2 {
                report.rows.push(stat_row("normalised_qv", delta_n, v, &z[v - 1], Some(0.0)));
                push_records(&mut records, delta_n, v, &z[v - 1], &seeds);
            }
            if !small {
                report
                    .covariance
                    .extend(covariance_check(delta_n, &z[0], &z[1], theory));
            }
        }
        Ok((report, records))
    })
}

pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    match cfg.kind {
        ExperimentKind::Lln => run_lln(cfg),
        ExperimentKind::Clt => run_clt(cfg),
        ExperimentKind::Coverage => run_coverage(cfg),
        ExperimentKind::LambdaCheck => run_lambda_check(cfg),
    }
}

/// Shortest round-trip decimal form of a binary64 value.
pub fn format_f64(x: f64) -> String {
    let s = format!("{x:?}");
    s.strip_suffix(".0").map(str::to_owned).unwrap_or(s)
}

/// Write `report.json`, `replications.csv` and `timing.json` into `dir`.
pub fn write_outputs(dir: &Path, out: &ExperimentOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(&out.report).map_err(|e| BssError::Parse(e.to_string()))?;
    std::fs::write(dir.join("report.json"), json + "\n")?;
    let mut csv = std::io::BufWriter::new(std::fs::File::create(dir.join("replications.csv"))?);
    writeln!(csv, "rep,delta_n,v,statistic_value,seed")?;
    for r in &out.records {
        writeln!(
            csv,
            "{},{},{},{},{}",
            r.rep,
            format_f64(r.delta_n),
            r.v,
            format_f64(r.statistic_value),
            r.seed
        )?;
    }
    csv.flush()?;
    let timing = serde_json::json!({ "wall_time_seconds": out.wall_time_seconds });
    std::fs::write(dir.join("timing.json"), timing.to_string() + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn lln_cfg() -> ExperimentConfig {
        ExperimentConfig {
            kind: ExperimentKind::Lln,
            spec: Some(WeightSpec::single(-1.0 / 6.0)),
            spec_path: None,
            sigma: IntermittencySpec::Constant { c: 1.0 },
            mu: 0.0,
            k: 2,
            delta_ladder: vec![1.0 / 64.0, 1.0 / 128.0],
            horizon: 1.0,
            replications: 24,
            master_seed: 5,
            refinement: 4,
            truncation: None,
            use_asymptotic_tau: false,
            hurst: None,
            output: None,
        }
    }

    #[test]
    fn ks_zero_sample_against_normal() {
        let (d, _) = ks_statistic(&[0.0; 10], |x| Normal::new(0.0, 1.0).unwrap().cdf(x)).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
        assert!(ks_statistic(&[0.0; 4], |x| x).is_err());
    }

    #[test]
    fn kolmogorov_tail_values() {
        // P(K > 1.358) ≈ 0.05, P(K > 1.628) ≈ 0.01
        assert!((kolmogorov_sf(1.358) - 0.05).abs() < 5e-4);
        assert!((kolmogorov_sf(1.628) - 0.01).abs() < 2e-4);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    #[test]
    fn ks_null_calibration() {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut small = 0;
        for m in 0..200u64 {
            let mut rng = rng_from_seed(derive_seed(99, m));
            let x: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
            let (_, p) = ks_statistic(&x, |z| normal.cdf(z)).unwrap();
            if p <= 0.001 {
                small += 1;
            }
        }
        assert!(small <= 2, "{small} p-values below 0.001");
    }

    #[test]
    fn seeds_depend_only_on_master_and_rep() {
        assert_eq!(replication_seed(1, 3, 0), replication_seed(1, 3, 0));
        assert_ne!(replication_seed(1, 3, 0), replication_seed(1, 4, 0));
        assert_ne!(replication_seed(1, 3, 0), replication_seed(1, 3, 1));
    }

    #[test]
    fn config_rejections() {
        let mut c = lln_cfg();
        c.replications = 0;
        assert!(c.validate().is_err());
        let mut c = lln_cfg();
        c.kind = ExperimentKind::Clt;
        c.sigma = IntermittencySpec::ExpOu { kappa: 1.0, xi: 0.1, y0: 0.0 };
        assert!(c.validate().is_err());
        let mut c = lln_cfg();
        c.kind = ExperimentKind::Coverage;
        c.k = 1;
        c.spec = Some(WeightSpec::single(0.1));
        assert!(c.validate().is_err());
        let mut c = lln_cfg();
        c.spec = None;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_toml_roundtrip() {
        let c = lln_cfg();
        let s = toml::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&s).unwrap(), c);
    }

    #[test]
    fn zero_sigma_statistics_vanish() {
        let mut c = lln_cfg();
        c.sigma = IntermittencySpec::Constant { c: 0.0 };
        let out = run_lln(&c).unwrap();
        assert!(out.records.iter().all(|r| r.statistic_value == 0.0));
        assert!(out.report.rows.iter().all(|r| r.mean == 0.0 && r.variance == 0.0));
    }

    #[test]
    fn lln_small_run_is_reproducible() {
        let c = lln_cfg();
        let a = run_lln(&c).unwrap();
        let b = run_lln(&c).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.records, b.records);
        let r = a.report.row("scaled_qv", 1.0 / 128.0, 1).unwrap();
        assert!((r.mean - 1.0).abs() < 4.0 * r.se + 0.02, "{r:?}");
    }

    #[test]
    fn clt_with_one_replication_is_flagged() {
        let mut c = lln_cfg();
        c.kind = ExperimentKind::Clt;
        c.replications = 1;
        c.delta_ladder = vec![1.0 / 64.0];
        let out = run_clt(&c).unwrap();
        assert!(out.report.ks.is_empty());
        assert!(out.report.flags.iter().any(|f| f.contains("insufficient")));
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0, -2.5e-300, 1.0 / 3.0, 4096.0] {
            assert_eq!(format_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(format_f64(2.0), "2");
    }
}
