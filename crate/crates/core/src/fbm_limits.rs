//! Correlations of filtered fractional Brownian motion increments and the
//! asymptotic covariance matrix `Λ_k` of the two-frequency QV statistics.

use serde::{Deserialize, Serialize};

use crate::error::{BssError, Result};
use crate::limit_quantities::gen_binom;
use crate::weight_model::{filter_coefficients, MAX_FILTER_ORDER};

pub const DEFAULT_LAMBDA_TOL: f64 = 1e-10;

/// Expansion terms kept for `ρ(j)` at large `|j|`.
const EXPANSION_TERMS: usize = 16;

/// Clamp bounds for plug-in `α̂`.
pub const ALPHA_CLAMP_K1: (f64, f64) = (-0.49, 0.24);
pub const ALPHA_CLAMP_K2: (f64, f64) = (-0.49, 0.49);

fn check_hurst(h: f64) -> Result<()> {
    if h > 0.0 && h < 1.0 {
        Ok(())
    } else {
        Err(BssError::InvalidArgument(format!("Hurst index must lie in (0, 1), got {h}")))
    }
}

fn check_kv(k: usize, v1: usize, v2: usize) -> Result<()> {
    if !(1..=MAX_FILTER_ORDER).contains(&k) {
        return Err(BssError::InvalidArgument(format!(
            "filter order k must lie in 1..={MAX_FILTER_ORDER}, got {k}"
        )));
    }
    for v in [v1, v2] {
        if !(v == 1 || v == 2) {
            return Err(BssError::InvalidArgument(format!("frequency multiplier must be 1 or 2, got {v}")));
        }
    }
    Ok(())
}

/// Covariance of fractional Brownian motion.
pub fn fbm_cov(h: f64, s: f64, t: f64) -> Result<f64> {
    check_hurst(h)?;
    let e = 2.0 * h;
    Ok(0.5 * (s.abs().powf(e) + t.abs().powf(e) - (t - s).abs().powf(e)))
}

/// `Σ_a Σ_b c_a c_b |j + v1·a − v2·b|^{2H}`, skipping the terms that cancel
/// because the filter coefficients sum to zero.
fn bilinear(c: &[f64], h: f64, v1: usize, v2: usize, j: f64) -> f64 {
    let e = 2.0 * h;
    let mut s = 0.0;
    for (a, ca) in c.iter().enumerate() {
        for (b, cb) in c.iter().enumerate() {
            let x = j + (v1 * a) as f64 - (v2 * b) as f64;
            if x != 0.0 {
                s += ca * cb * x.abs().powf(e);
            }
        }
    }
    s
}

/// Variance of the `k`-th filter of fBm at unit step times `v`.
fn filter_variance(c: &[f64], h: f64, v: usize) -> f64 {
    -0.5 * bilinear(c, h, v, v, 0.0)
}

/// `E[(Δ_k^v B^H)²]` at unit observation step.
pub fn fbm_filter_variance(h: f64, k: usize, v: usize) -> Result<f64> {
    check_hurst(h)?;
    check_kv(k, v, v)?;
    Ok(filter_variance(&filter_coefficients(k), h, v))
}

/// Filtered-fBm correlation for one frequency pair: direct bilinear sum at
/// small lags, convergent large-lag expansion beyond `switch`.
struct Corr {
    c: Vec<f64>,
    h: f64,
    v1: usize,
    v2: usize,
    norm: f64,
    pos: Vec<f64>,
    neg: Vec<f64>,
    switch: i64,
}

impl Corr {
    fn new(h: f64, k: usize, v1: usize, v2: usize) -> Self {
        let c = filter_coefficients(k);
        let norm = (filter_variance(&c, h, v1) * filter_variance(&c, h, v2)).sqrt();
        let pos = expansion_coeffs(&c, h, v1, v2, 1, norm);
        let neg = expansion_coeffs(&c, h, v1, v2, -1, norm);
        let switch = if k == 1 { 128 } else { 32 * k as i64 };
        Self {
            c,
            h,
            v1,
            v2,
            norm,
            pos,
            neg,
            switch,
        }
    }

    fn eval(&self, j: i64) -> f64 {
        if j.abs() <= self.switch {
            return -0.5 * bilinear(&self.c, self.h, self.v1, self.v2, j as f64) / self.norm;
        }
        let a = if j > 0 { &self.pos } else { &self.neg };
        let x = (j.abs()) as f64;
        let k = self.c.len() - 1;
        let mut s = 0.0;
        // smallest terms first
        for (p, ap) in a.iter().enumerate().rev() {
            s += ap * x.powf(2.0 * self.h - (2 * k + p) as f64);
        }
        s
    }
}

/// `ρ_k^{v1,v2}(j) = corr(Δ^{v1}_{i,k} B^H, Δ^{v2}_{i+j,k} B^H)` at unit step.
pub fn rho(h: f64, k: usize, v1: usize, v2: usize, j: i64) -> Result<f64> {
    check_hurst(h)?;
    check_kv(k, v1, v2)?;
    Ok(Corr::new(h, k, v1, v2).eval(j))
}

/// Table of `ρ_k^{v1,v2}(j)` for `|j| ≤ max_lag` and all frequency pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbmFilterCorr {
    pub hurst: f64,
    pub k: usize,
    pub max_lag: i64,
    /// Indexed `[2(v1−1) + (v2−1)][j + max_lag]`.
    table: Vec<Vec<f64>>,
}

impl FbmFilterCorr {
    pub fn new(h: f64, k: usize, max_lag: i64) -> Result<Self> {
        check_hurst(h)?;
        check_kv(k, 1, 1)?;
        let mut table = Vec::with_capacity(4);
        for v1 in 1..=2 {
            for v2 in 1..=2 {
                let corr = Corr::new(h, k, v1, v2);
                table.push((-max_lag..=max_lag).map(|j| corr.eval(j)).collect());
            }
        }
        Ok(Self {
            hurst: h,
            k,
            max_lag,
            table,
        })
    }

    pub fn get(&self, v1: usize, v2: usize, j: i64) -> Option<f64> {
        if !(1..=2).contains(&v1) || !(1..=2).contains(&v2) || j.abs() > self.max_lag {
            return None;
        }
        Some(self.table[2 * (v1 - 1) + (v2 - 1)][(j + self.max_lag) as usize])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaMatrix {
    pub entries: [[f64; 2]; 2],
    pub hurst: f64,
    pub k: usize,
    /// Lags `|j| ≤ truncation_j` are summed directly.
    pub truncation_j: i64,
    /// Analytic tail `Σ_{|j| > J} ρ²` (times 2, summed over entries) added to the partial sums.
    pub tail_bound: f64,
}

impl LambdaMatrix {
    pub fn lambda11(&self) -> f64 {
        self.entries[0][0]
    }
    pub fn lambda12(&self) -> f64 {
        self.entries[0][1]
    }
    pub fn lambda22(&self) -> f64 {
        self.entries[1][1]
    }

    /// `(−1, 1) Λ (−1, 1)ᵀ`.
    pub fn contrast_variance(&self) -> f64 {
        self.lambda11() - 2.0 * self.lambda12() + self.lambda22()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let (a, b, d) = (self.lambda11(), self.lambda12(), self.lambda22());
        let mean = 0.5 * (a + d);
        let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        mean - rad
    }
}

/// Hurwitz zeta `Σ_{n≥0} (a + n)^{−s}` for `s > 1`, by Euler–Maclaurin.
pub(crate) fn hurwitz_zeta(s: f64, a: f64) -> f64 {
    const B2: [f64; 7] = [
        1.0 / 6.0,
        -1.0 / 30.0,
        1.0 / 42.0,
        -1.0 / 30.0,
        5.0 / 66.0,
        -691.0 / 2730.0,
        7.0 / 6.0,
    ];
    let n = (20.0 - a).max(0.0).ceil() as usize;
    let mut sum = 0.0;
    for i in 0..n {
        sum += (a + i as f64).powf(-s);
    }
    let x = a + n as f64;
    sum += x.powf(1.0 - s) / (s - 1.0) + 0.5 * x.powf(-s);
    let mut rising = s;
    let mut fact = 2.0;
    let mut xp = x.powf(-s - 1.0);
    for (p, b) in B2.iter().enumerate() {
        sum += b / fact * rising * xp;
        let q = 2 * p + 2;
        rising *= (s + q as f64 - 1.0) * (s + q as f64);
        fact *= ((q + 1) * (q + 2)) as f64;
        xp /= x * x;
    }
    sum
}

/// Coefficients `A_m` of `ρ(j) = Σ_m A_m |j|^{2H−m}` for large positive (`sign = 1`)
/// or negative (`sign = −1`) lags, `m = 2k, 2k+1, …`.
fn expansion_coeffs(c: &[f64], h: f64, v1: usize, v2: usize, sign: i128, norm: f64) -> Vec<f64> {
    let k = c.len() - 1;
    (2 * k..2 * k + EXPANSION_TERMS)
        .map(|m| {
            // exact integer moment Σ c_a c_b (sign·(v1·a − v2·b))^m
            let mut moment: i128 = 0;
            for (a, ca) in c.iter().enumerate() {
                for (b, cb) in c.iter().enumerate() {
                    let x = sign * ((v1 * a) as i128 - (v2 * b) as i128);
                    moment += (*ca as i128) * (*cb as i128) * x.pow(m as u32);
                }
            }
            -0.5 * gen_binom(2.0 * h, m) * moment as f64 / norm
        })
        .collect()
}

fn lambda_entry(k: usize, h: f64, v1: usize, v2: usize, big_j: i64, rel_tol: f64) -> Result<(f64, f64)> {
    let corr = Corr::new(h, k, v1, v2);
    let mut partial = 0.0;
    for j in -big_j..=big_j {
        let r = corr.eval(j);
        partial += r * r;
    }
    let mut tail = 0.0;
    let mut last_term: f64 = 0.0;
    for a in [&corr.pos, &corr.neg] {
        for (p, ap) in a.iter().enumerate() {
            for (q, aq) in a.iter().enumerate() {
                let s = (p + q + 4 * k) as f64 - 4.0 * h;
                let term = ap * aq * hurwitz_zeta(s, (big_j + 1) as f64);
                tail += term;
                if p + q == 2 * (EXPANSION_TERMS - 1) {
                    last_term = last_term.max(term.abs());
                }
            }
        }
    }
    let sum = partial + tail;
    if !(sum.is_finite() && last_term <= rel_tol * sum.abs()) {
        return Err(BssError::SeriesTail {
            op: "lambda_matrix",
            detail: format!("last expansion term {last_term:e} vs series {sum:e}"),
        });
    }
    Ok((2.0 * sum, 2.0 * tail))
}

/// `Λ_k(H)` with entries `λ_{v1v2} = 2 Σ_{j∈ℤ} ρ_k^{v1,v2}(j)²`.
pub fn lambda_matrix(h: f64, k: usize, rel_tol: f64) -> Result<LambdaMatrix> {
    check_hurst(h)?;
    check_kv(k, 1, 1)?;
    if k == 1 && h >= 0.75 {
        return Err(BssError::Precondition {
            op: "lambda_matrix",
            detail: format!("the series diverges for k = 1 and H = {h} >= 0.75"),
        });
    }
    if !(rel_tol > 0.0) {
        return Err(BssError::InvalidArgument(format!("rel_tol must be positive, got {rel_tol}")));
    }
    let big_j = (64 * k as i64 * 2).max(256);
    let (l11, t11) = lambda_entry(k, h, 1, 1, big_j, rel_tol)?;
    let (l12, t12) = lambda_entry(k, h, 1, 2, big_j, rel_tol)?;
    let (l22, t22) = lambda_entry(k, h, 2, 2, big_j, rel_tol)?;
    Ok(LambdaMatrix {
        entries: [[l11, l12], [l12, l22]],
        hurst: h,
        k,
        truncation_j: big_j,
        tail_bound: t11.abs() + t12.abs() + t22.abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginLambda {
    pub lambda: LambdaMatrix,
    pub alpha_used: f64,
    pub clamped: bool,
}

pub fn clamp_alpha(alpha_hat: f64, k: usize) -> (f64, bool) {
    let (lo, hi) = if k == 1 { ALPHA_CLAMP_K1 } else { ALPHA_CLAMP_K2 };
    let a = alpha_hat.clamp(lo, hi);
    (a, a != alpha_hat)
}

/// `Λ_k` at `H = α̂ + ½`, with `α̂` clamped into the region where the series converges.
pub fn lambda_matrix_at_alpha_hat(alpha_hat: f64, k: usize) -> Result<PluginLambda> {
    if alpha_hat.is_nan() {
        return Err(BssError::Degenerate("alpha estimate is NaN".into()));
    }
    let (a, clamped) = clamp_alpha(alpha_hat, k);
    Ok(PluginLambda {
        lambda: lambda_matrix(a + 0.5, k, DEFAULT_LAMBDA_TOL)?,
        alpha_used: a,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn closed_form(h: f64, j: f64) -> f64 {
        let e = 2.0 * h;
        0.5 * ((j + 1.0).abs().powf(e) - 2.0 * j.abs().powf(e) + (j - 1.0).abs().powf(e))
    }

    #[test]
    fn fbm_cov_values() {
        assert!((fbm_cov(0.5, 1.0, 2.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((fbm_cov(0.37, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        let v = fbm_cov(1.0 / 3.0, 1.0, 2.0).unwrap();
        assert!((v - 2f64.powf(2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!((v - 0.7937).abs() < 1e-4);
        assert!(fbm_cov(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn rho_values() {
        assert!(rho(0.5, 1, 1, 1, 1).unwrap().abs() < 1e-15);
        let r = rho(1.0 / 3.0, 1, 1, 1, 1).unwrap();
        assert!((r - 0.5 * (2f64.powf(2.0 / 3.0) - 2.0)).abs() < 1e-14);
        assert!((r + 0.20630).abs() < 1e-5);
        for k in 1..4 {
            for v in 1..=2 {
                assert!((rho(0.3, k, v, v, 0).unwrap() - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rho_matches_closed_form() {
        for hi in 1..=9 {
            let h = hi as f64 / 10.0;
            for j in 1..=100 {
                let r = rho(h, 1, 1, 1, j).unwrap();
                assert!((r - closed_form(h, j as f64)).abs() < 1e-12, "H={h} j={j}");
            }
        }
    }

    #[test]
    fn lambda_brownian_is_two() {
        let l = lambda_matrix(0.5, 1, 1e-10).unwrap();
        assert_eq!(l.lambda11(), 2.0);
    }

    #[test]
    fn lambda_k1_matches_long_partial_sum() {
        let h = 1.0 / 3.0;
        let l = lambda_matrix(h, 1, 1e-10).unwrap();
        // brute-force partial sum of the closed form out to 10^6 lags
        let mut s = 0.0;
        for j in 1..=1_000_000 {
            let r = closed_form(h, j as f64);
            s += r * r;
        }
        let oracle = 2.0 * (1.0 + 2.0 * s);
        assert!((l.lambda11() / oracle - 1.0).abs() < 1e-6);
    }

    #[test]
    fn lambda_k2_psd() {
        let l = lambda_matrix(1.0 / 3.0, 2, 1e-10).unwrap();
        assert!(l.min_eigenvalue() >= -1e-10);
        assert!(l.lambda11() >= 2.0 && l.lambda22() >= 2.0);
    }

    #[test]
    fn lambda_precondition() {
        assert!(matches!(
            lambda_matrix(0.8, 1, 1e-10).unwrap_err(),
            BssError::Precondition { .. }
        ));
        assert!(lambda_matrix(0.8, 2, 1e-10).is_ok());
    }

    #[test]
    fn plugin_clamp() {
        let p = lambda_matrix_at_alpha_hat(0.0, 1).unwrap();
        assert_eq!(p.lambda.lambda11(), 2.0);
        assert!(!p.clamped);
        let p = lambda_matrix_at_alpha_hat(0.4, 1).unwrap();
        assert!(p.clamped);
        assert_eq!(p.alpha_used, 0.24);
        let p = lambda_matrix_at_alpha_hat(-1.0 / 6.0, 2).unwrap();
        let direct = lambda_matrix(1.0 / 3.0, 2, DEFAULT_LAMBDA_TOL).unwrap();
        assert!(!p.clamped);
        for r in 0..2 {
            for c in 0..2 {
                assert!((p.lambda.entries[r][c] - direct.entries[r][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hurwitz_against_direct_sum() {
        let (s, a) = (2.5, 300.0);
        let mut direct = 0.0;
        for n in 0..2_000_000 {
            direct += (a + n as f64).powf(-s);
        }
        direct += (a + 2e6f64).powf(1.0 - s) / (s - 1.0);
        assert!((hurwitz_zeta(s, a) / direct - 1.0).abs() < 1e-10);
        // Riemann zeta(2)
        assert!((hurwitz_zeta(2.0, 1.0) - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-12);
    }

    #[test]
    fn table_agrees_with_rho() {
        let t = FbmFilterCorr::new(0.4, 2, 20).unwrap();
        for j in -20..=20 {
            assert_eq!(t.get(1, 2, j).unwrap(), rho(0.4, 2, 1, 2, j).unwrap());
        }
        assert!(t.get(1, 1, 21).is_none());
    }

    #[test]
    fn decay_slope() {
        for (h, k) in [(0.3, 1usize), (0.7, 2), (0.4, 3)] {
            let (j1, j2) = (200i64, 2000i64);
            let r1 = rho(h, k, 1, 1, j1).unwrap().abs();
            let r2 = rho(h, k, 1, 1, j2).unwrap().abs();
            let slope = (r2.ln() - r1.ln()) / ((j2 as f64).ln() - (j1 as f64).ln());
            assert!((slope - 2.0 * (h - k as f64)).abs() < 0.3, "slope {slope}");
        }
    }

    proptest! {
        #[test]
        fn rho_symmetric_and_bounded(h in 0.02f64..0.98, k in 1usize..4, v in 1usize..3, j in 0i64..300) {
            let a = rho(h, k, v, v, j).unwrap();
            let b = rho(h, k, v, v, -j).unwrap();
            // rounding in the bilinear sum grows with the size of its terms
            let scale = (1.0 + j as f64).powf(2.0 * h);
            prop_assert!((a - b).abs() < 1e-13 * scale.max(10.0));
            prop_assert!(a.abs() <= 1.0 + 1e-12);
            let c = rho(h, k, 1, 2, j).unwrap();
            prop_assert!(c.abs() <= 1.0 + 1e-12);
        }

        #[test]
        fn lambda_continuous_in_hurst(h in 0.05f64..0.7, k in 1usize..3) {
            let a = lambda_matrix(h, k, 1e-10).unwrap();
            let b = lambda_matrix(h + 1e-6, k, 1e-10).unwrap();
            for r in 0..2 {
                for c in 0..2 {
                    prop_assert!((a.entries[r][c] - b.entries[r][c]).abs() < 1e-3);
                }
            }
        }
    }
}
