//! Observable statistics of a sampled path: filtered differences, realised
//! quadratic variation and quarticity, and the ratio estimator of `α` with its
//! feasible standardisation.

use serde::{Deserialize, Serialize};

use crate::error::{BssError, Result};
use crate::fbm_limits::{lambda_matrix_at_alpha_hat, LambdaMatrix};
use crate::limit_quantities::{pi_k, tau_sq, tau_sq_asymptotic, DEFAULT_REL_TOL};
use crate::quadrature::{integrate, QuadOptions};
use crate::simulation::{IntermittencySpec, PathSample};
use crate::weight_model::{filter_coefficients, WeightSpec, MAX_FILTER_ORDER};

/// Quadratic variations below this are treated as zero.
pub const QV_FLOOR: f64 = 1e-300;

const Z_975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QVResult {
    pub value: f64,
    pub k: usize,
    pub v: usize,
    pub delta_n: f64,
    pub n_terms: usize,
    /// Running sums at every grid point (zero before the first full filter).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub as_process: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub alpha_hat: f64,
    pub s_n: f64,
    pub qv_1: QVResult,
    pub qv_2: QVResult,
    pub qq_1: f64,
    /// Standardised statistic at `null_alpha`; absent in interval mode.
    pub t_stat: Option<f64>,
    pub null_alpha: Option<f64>,
    pub ci_95: [f64; 2],
    pub lambda_used: LambdaMatrix,
    pub alpha_for_lambda: f64,
    pub clamped: bool,
    /// No kernel was supplied, so `t_used` was not checked against the spacing.
    pub horizon_unchecked: bool,
    pub k: usize,
    pub t_used: f64,
}

fn check_kv(k: usize, v: usize) -> Result<()> {
    if k == 0 || k > MAX_FILTER_ORDER {
        return Err(BssError::InvalidArgument(format!(
            "filter order k must lie in 1..={MAX_FILTER_ORDER}, got {k}"
        )));
    }
    if v == 0 {
        return Err(BssError::InvalidArgument("frequency multiplier v must be positive".into()));
    }
    Ok(())
}

/// `Δ_{i,k}^{n,v} X` for `i = vk, …, len − 1`.
pub fn kth_differences_of(values: &[f64], k: usize, v: usize) -> Result<Vec<f64>> {
    check_kv(k, v)?;
    if values.len() <= v * k {
        return Err(BssError::InvalidArgument(format!(
            "path of length {} is too short for k = {k}, v = {v}",
            values.len()
        )));
    }
    let c = filter_coefficients(k);
    Ok((v * k..values.len())
        .map(|i| c.iter().enumerate().map(|(j, cj)| cj * values[i - v * j]).sum())
        .collect())
}

pub fn kth_differences(path: &PathSample, k: usize, v: usize) -> Result<Vec<f64>> {
    kth_differences_of(&path.values, k, v)
}

pub fn qv_of(values: &[f64], delta_n: f64, k: usize, v: usize, with_process: bool) -> Result<QVResult> {
    let d = kth_differences_of(values, k, v)?;
    let as_process = with_process.then(|| {
        let mut out = vec![0.0; values.len()];
        let mut acc = 0.0;
        for (i, x) in d.iter().enumerate() {
            acc += x * x;
            out[v * k + i] = acc;
        }
        out
    });
    Ok(QVResult {
        value: d.iter().map(|x| x * x).sum(),
        k,
        v,
        delta_n,
        n_terms: d.len(),
        as_process,
    })
}

pub fn qv(path: &PathSample, k: usize, v: usize) -> Result<QVResult> {
    qv_of(&path.values, path.grid.delta_n, k, v, false)
}

pub fn qv_process(path: &PathSample, k: usize, v: usize) -> Result<QVResult> {
    qv_of(&path.values, path.grid.delta_n, k, v, true)
}

pub fn qq_of(values: &[f64], k: usize, v: usize) -> Result<f64> {
    Ok(kth_differences_of(values, k, v)?
        .iter()
        .map(|x| {
            let s = x * x;
            s * s
        })
        .sum())
}

pub fn qq(path: &PathSample, k: usize, v: usize) -> Result<f64> {
    qq_of(&path.values, k, v)
}

/// `τ_k(vΔ_n)²`, exact or from the small-scale asymptotics.
pub fn tau_sq_for(spec: &WeightSpec, k: usize, v: usize, delta_n: f64, use_asymptotic_tau: bool) -> Result<f64> {
    if use_asymptotic_tau {
        tau_sq_asymptotic(spec, k, v, delta_n, DEFAULT_REL_TOL)
    } else {
        Ok(tau_sq(spec, k, v, delta_n, DEFAULT_REL_TOL)?.tau_sq_exact)
    }
}

/// `Δ_n/τ_k(vΔ_n)² · QV(X, k, vΔ_n)_t`.
pub fn scaled_qv(path: &PathSample, spec: &WeightSpec, k: usize, v: usize, use_asymptotic_tau: bool) -> Result<f64> {
    let q = qv(path, k, v)?;
    let tau = tau_sq_for(spec, k, v, path.grid.delta_n, use_asymptotic_tau)?;
    Ok(path.grid.delta_n / tau * q.value)
}

/// `∫_0^∞ (∫_{−θ}^{t−θ} σ_s² ds) π_k(dθ)` for non-random σ.
pub fn limit_qv(spec: &WeightSpec, sigma: &IntermittencySpec, k: usize, t: f64) -> Result<f64> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(BssError::InvalidArgument(format!("t must be nonnegative, got {t}")));
    }
    sigma.check()?;
    if matches!(sigma, IntermittencySpec::ExpOu { .. }) {
        return Err(BssError::InvalidArgument(
            "limit_qv needs a constant or deterministic sigma".into(),
        ));
    }
    let pi = pi_k(spec, k)?;
    let mut total = 0.0;
    for (&theta, &w) in pi.support.iter().zip(&pi.weights) {
        let inner = match sigma {
            IntermittencySpec::Constant { c } => c * c * t,
            s => {
                integrate(
                    |u| {
                        let x = s.eval(u).unwrap_or(0.0);
                        x * x
                    },
                    -theta,
                    t - theta,
                    &QuadOptions::with_rel_tol(1e-10),
                )
                .map_err(|e| e.in_op("limit_qv"))?
                .value
            }
        };
        total += w * inner;
    }
    Ok(total)
}

fn leading_values(path: &PathSample, t_used: f64) -> Result<&[f64]> {
    if !(t_used > 0.0 && t_used.is_finite()) {
        return Err(BssError::InvalidArgument(format!("t must be positive, got {t_used}")));
    }
    let last = (t_used / path.grid.delta_n * (1.0 + 1e-12)).floor() as usize;
    if last >= path.values.len() {
        return Err(BssError::InvalidArgument(format!(
            "t = {t_used} exceeds the path horizon {}",
            (path.values.len() - 1) as f64 * path.grid.delta_n
        )));
    }
    Ok(&path.values[..=last])
}

/// Ratio estimator of `α` from frequencies `Δ_n` and `2Δ_n`, with the feasible
/// standardised statistic at `null_alpha` and the 95% interval.
pub fn estimate_alpha(
    path: &PathSample,
    k: usize,
    t_used: f64,
    known_spec: Option<&WeightSpec>,
    null_alpha: Option<f64>,
) -> Result<EstimationResult> {
    let values = leading_values(path, t_used)?;
    if let Some(spec) = known_spec {
        if let Some(gap) = spec.min_spacing() {
            if t_used >= gap {
                return Err(BssError::Precondition {
                    op: "estimate_alpha",
                    detail: format!("t = {t_used} is not below the minimal singularity spacing {gap}"),
                });
            }
        }
    }
    if let Some(a) = null_alpha {
        if !a.is_finite() {
            return Err(BssError::InvalidArgument(format!("null alpha must be finite, got {a}")));
        }
    }
    let delta_n = path.grid.delta_n;
    let qv_1 = qv_of(values, delta_n, k, 1, false)?;
    let qv_2 = qv_of(values, delta_n, k, 2, false)?;
    if !(qv_1.value > QV_FLOOR && qv_2.value > QV_FLOOR) {
        return Err(BssError::Degenerate(format!(
            "quadratic variation is zero (QV_1 = {:e}, QV_2 = {:e})",
            qv_1.value, qv_2.value
        )));
    }
    let qq_1 = qq_of(values, k, 1)?;
    let s_n = qv_2.value / qv_1.value;
    let alpha_hat = 0.5 * (s_n.log2() - 1.0);
    let plug = lambda_matrix_at_alpha_hat(alpha_hat, k)?;
    let den = (qq_1 / 3.0 * plug.lambda.contrast_variance()).sqrt();
    let scale = 2.0 * std::f64::consts::LN_2 * qv_1.value;
    let half = Z_975 * den / scale;
    let t_stat = null_alpha.map(|a| scale * (alpha_hat - a) / den);
    Ok(EstimationResult {
        alpha_hat,
        s_n,
        qv_1,
        qv_2,
        qq_1,
        t_stat,
        null_alpha,
        ci_95: [alpha_hat - half, alpha_hat + half],
        lambda_used: plug.lambda,
        alpha_for_lambda: plug.alpha_used,
        clamped: plug.clamped,
        horizon_unchecked: known_spec.is_none(),
        k,
        t_used,
    })
}
