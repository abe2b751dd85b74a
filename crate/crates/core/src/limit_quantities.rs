//! Deterministic limit objects: `h_j`, `‖h_j‖²`, `π_k`, `τ_k(vΔ)²`, the
//! pre-limit measures `π^v_{n,k}` and the correlation kernel of the Gaussian core.

use serde::{Deserialize, Serialize};

use crate::error::{BssError, Result};
use crate::quadrature::{integrate_nodes, Node, QuadOptions, Quadrature};
use crate::weight_model::{
    check_filter_args, ensure_valid, filter_coefficients, g_norm_sq, sort_nodes, square_exponent,
    summarize_smoothness, KernelKind, WeightSpec,
};

pub const DEFAULT_REL_TOL: f64 = 1e-8;

/// Number of terms kept in the large-|x| expansion of `h_j`.
const TAIL_TERMS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitMeasure {
    pub support: Vec<f64>,
    pub weights: Vec<f64>,
    pub h_norms_sq: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    pub tau_sq_exact: f64,
    pub tau_sq_asymptotic: f64,
    pub delta_n: f64,
    pub k: usize,
    pub v: usize,
    pub quadrature_error_estimate: f64,
}

/// Generalised binomial coefficient `C(a, m)`.
pub(crate) fn gen_binom(a: f64, m: usize) -> f64 {
    let mut c = 1.0;
    for i in 0..m {
        c *= (a - i as f64) / (i as f64 + 1.0);
    }
    c
}

fn check_segment(spec: &WeightSpec, j: usize, k: usize) -> Result<()> {
    if spec.kind != KernelKind::SingularKernel {
        return Err(BssError::InvalidArgument(
            "h_j is defined only for singular kernels".into(),
        ));
    }
    if j >= spec.segments.len() {
        return Err(BssError::InvalidArgument(format!(
            "segment index {j} out of range (kernel has {} singularities)",
            spec.segments.len()
        )));
    }
    check_filter_args(spec, k, 1)
}

#[inline]
fn power(d: f64, alpha: f64, one_sided: bool) -> f64 {
    if d == 0.0 || (one_sided && d < 0.0) {
        0.0
    } else {
        d.abs().powf(alpha)
    }
}

/// `h_j(x)`: one-sided plus-powers for `j = 0`, two-sided `|x − m|^{α_j}` otherwise.
pub fn h_function(spec: &WeightSpec, j: usize, k: usize, x: f64) -> Result<f64> {
    check_segment(spec, j, k)?;
    let seg = &spec.segments[j];
    let c = filter_coefficients(k);
    let s: f64 = c
        .iter()
        .enumerate()
        .map(|(m, cm)| cm * power(x - m as f64, seg.alpha, j == 0))
        .sum();
    Ok(seg.leading_coefficient() * s)
}

/// `∫ (Σ_m c_m (x − m)_±^α)² dx` at unit scale.
///
/// The range `|x| ≤ M` is integrated with nodes at the integers; beyond it
/// the integrand is replaced by its convergent expansion
/// `|x|^α Σ_{m≥k} a_m |x|^{−m}` and integrated term by term.
fn unit_h_norm_sq(alpha: f64, k: usize, one_sided: bool, rel_tol: f64) -> Result<Quadrature> {
    let c = filter_coefficients(k);
    let big = 16 * k as i64;
    let mut nodes: Vec<Node<i64>> = Vec::new();
    if !one_sided {
        nodes.push(Node::regular(-big as f64, -big));
    }
    for m in 0..=k as i64 {
        nodes.push(Node::singular(m as f64, m, square_exponent(alpha)));
    }
    nodes.push(Node::regular(big as f64, big));

    let q = integrate_nodes(
        |node, off| {
            let mut s = 0.0;
            for (m, cm) in c.iter().enumerate() {
                let d = if node == m as i64 {
                    off
                } else {
                    (node - m as i64) as f64 + off
                };
                s += cm * power(d, alpha, one_sided);
            }
            s * s
        },
        &nodes,
        &QuadOptions::with_rel_tol(rel_tol),
    )?;

    let moments: Vec<f64> = (0..k + TAIL_TERMS)
        .map(|m| {
            c.iter()
                .enumerate()
                .map(|(j, cj)| cj * (j as f64).powi(m as i32))
                .sum()
        })
        .collect();
    let right: Vec<f64> = (k..k + TAIL_TERMS)
        .map(|m| {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            gen_binom(alpha, m) * sign * moments[m]
        })
        .collect();
    let left: Vec<f64> = (k..k + TAIL_TERMS)
        .map(|m| gen_binom(alpha, m) * moments[m])
        .collect();
    let tail_of = |a: &[f64]| {
        let bigf = big as f64;
        let mut t = 0.0;
        for (p, ap) in a.iter().enumerate() {
            for (r, ar) in a.iter().enumerate() {
                let e = (p + r + 2 * k) as f64 - 2.0 * alpha - 1.0;
                t += ap * ar * bigf.powf(-e) / e;
            }
        }
        t
    };
    let mut tail = tail_of(&right);
    if !one_sided {
        tail += tail_of(&left);
    }
    Ok(Quadrature {
        value: q.value + tail,
        ..q
    })
}

/// `‖h_j‖²_{L²(ℝ)}`.
pub fn h_norm_sq(spec: &WeightSpec, j: usize, k: usize, rel_tol: f64) -> Result<f64> {
    check_segment(spec, j, k)?;
    if !(rel_tol > 0.0 && rel_tol <= 1e-4) {
        return Err(BssError::InvalidArgument(format!(
            "rel_tol must lie in (0, 1e-4], got {rel_tol}"
        )));
    }
    let seg = &spec.segments[j];
    let q = unit_h_norm_sq(seg.alpha, k, j == 0, rel_tol).map_err(|e| e.in_op("h_norm_sq"))?;
    let f = seg.leading_coefficient();
    Ok(f * f * q.value)
}

/// The limit measure `π_k` on the active singularities.
pub fn pi_k(spec: &WeightSpec, k: usize) -> Result<LimitMeasure> {
    pi_k_with_tol(spec, k, DEFAULT_REL_TOL)
}

pub fn pi_k_with_tol(spec: &WeightSpec, k: usize, rel_tol: f64) -> Result<LimitMeasure> {
    ensure_valid(spec)?;
    let summary = summarize_smoothness(spec)?;
    let h_norms_sq = (0..spec.segments.len())
        .map(|j| h_norm_sq(spec, j, k, rel_tol))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = summary.active_set.iter().map(|&i| h_norms_sq[i]).sum();
    Ok(LimitMeasure {
        support: summary
            .active_set
            .iter()
            .map(|&i| spec.segments[i].theta)
            .collect(),
        weights: summary
            .active_set
            .iter()
            .map(|&i| h_norms_sq[i] / total)
            .collect(),
        h_norms_sq,
    })
}

/// Where a node of the filtered kernel sits: `x = θ_anchor + m·vΔ + base`.
#[derive(Debug, Clone, Copy)]
struct FilterSite {
    anchor: usize,
    m: i64,
    base: f64,
}

struct FilteredKernel<'a> {
    spec: &'a WeightSpec,
    coeffs: Vec<f64>,
    step: f64,
    /// Past this point the filtered kernel is `tail_amp·e^{−λx}` (or zero).
    tail_start: f64,
    tail_amp: f64,
}

impl<'a> FilteredKernel<'a> {
    fn new(spec: &'a WeightSpec, k: usize, v: usize, delta_n: f64) -> Self {
        let coeffs = filter_coefficients(k);
        let step = v as f64 * delta_n;
        let tail_start = spec.support_end() + k as f64 * step;
        let tail_amp = if spec.is_singular() {
            let lam = spec.tail_rate;
            spec.baseline_coefficient()
                * coeffs
                    .iter()
                    .enumerate()
                    .map(|(j, c)| c * (lam * j as f64 * step).exp())
                    .sum::<f64>()
        } else {
            0.0
        };
        Self {
            spec,
            coeffs,
            step,
            tail_start,
            tail_amp,
        }
    }

    #[inline]
    fn eval(&self, site: FilterSite, off: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let d = (site.m - j as i64) as f64 * self.step + site.base;
                c * self.spec.eval_local(site.anchor, d + off)
            })
            .sum()
    }

    fn structural_nodes(&self) -> Vec<Node<FilterSite>> {
        let spec = self.spec;
        let k = self.coeffs.len() - 1;
        let mut nodes = Vec::new();
        for a in 0..spec.anchor_count() {
            let exponent = match spec.kind {
                KernelKind::SingularKernel => Some(square_exponent(spec.segments[a].alpha)),
                KernelKind::IndicatorSum => None,
            };
            for m in 0..=k as i64 {
                let x = spec.anchor(a) + m as f64 * self.step;
                let site = FilterSite {
                    anchor: a,
                    m,
                    base: 0.0,
                };
                nodes.push(match exponent {
                    Some(e) => Node::singular(x, site, e),
                    None => Node::regular(x, site),
                });
            }
        }
        for x in spec.blend_points() {
            nodes.push(self.regular_node(x));
        }
        nodes
    }

    fn regular_node(&self, x: f64) -> Node<FilterSite> {
        let a = self.spec.nearest_anchor(x);
        Node::regular(
            x,
            FilterSite {
                anchor: a,
                m: 0,
                base: x - self.spec.anchor(a),
            },
        )
    }

    /// `∫_lo^hi (Δ_k g)²`, quadrature up to `tail_start` and closed form beyond.
    fn square_integral(&self, lo: f64, hi: f64, rel_tol: f64) -> Result<Quadrature> {
        let lo = lo.max(0.0);
        let mut total = Quadrature {
            value: 0.0,
            error: 0.0,
            intervals: 0,
        };
        if hi <= lo {
            return Ok(total);
        }
        let q_hi = hi.min(self.tail_start);
        if q_hi > lo {
            let mut nodes: Vec<_> = self
                .structural_nodes()
                .into_iter()
                .filter(|n| n.x > lo && n.x < q_hi)
                .collect();
            nodes.push(self.regular_node(lo));
            nodes.push(self.regular_node(q_hi));
            sort_nodes(&mut nodes);
            total = integrate_nodes(
                |site, off| {
                    let v = self.eval(site, off);
                    v * v
                },
                &nodes,
                &QuadOptions::with_rel_tol(rel_tol),
            )?;
        }
        if hi > self.tail_start && self.tail_amp != 0.0 {
            let lam = self.spec.tail_rate;
            let a = lo.max(self.tail_start);
            let upper = if hi.is_finite() {
                (-2.0 * lam * hi).exp()
            } else {
                0.0
            };
            total.value += self.tail_amp * self.tail_amp * ((-2.0 * lam * a).exp() - upper) / (2.0 * lam);
        }
        Ok(total)
    }
}

fn check_delta(spec: &WeightSpec, k: usize, v: usize, delta_n: f64) -> Result<()> {
    if !(delta_n > 0.0 && delta_n.is_finite()) {
        return Err(BssError::InvalidArgument(format!(
            "delta_n must be positive, got {delta_n}"
        )));
    }
    if spec.is_singular() {
        let min_half = spec
            .segments
            .iter()
            .map(|s| s.half_width)
            .fold(f64::INFINITY, f64::min);
        let bound = min_half / (2.0 * k as f64 * v as f64);
        if delta_n >= bound {
            return Err(BssError::Precondition {
                op: "tau_sq",
                detail: format!("delta_n = {delta_n} must be below min half_width/(2kv) = {bound}"),
            });
        }
    }
    Ok(())
}

/// Large-`n` approximation of `τ_k(vΔ)²`: `(vΔ)^{2α+1} Σ_{j∈𝒜} ‖h_j‖²` for
/// singular kernels, and the exact small-`Δ` value for indicator sums.
pub fn tau_sq_asymptotic(spec: &WeightSpec, k: usize, v: usize, delta_n: f64, rel_tol: f64) -> Result<f64> {
    check_filter_args(spec, k, v)?;
    let step = v as f64 * delta_n;
    match spec.kind {
        KernelKind::SingularKernel => {
            let summary = summarize_smoothness(spec)?;
            let mut total = 0.0;
            for &j in &summary.active_set {
                total += h_norm_sq(spec, j, k, rel_tol.min(1e-4))?;
            }
            Ok(step.powf(2.0 * summary.alpha_min + 1.0) * total)
        }
        KernelKind::IndicatorSum => {
            let c = filter_coefficients(k);
            let mut partial = 0.0;
            let mut per_jump = 0.0;
            for cm in c.iter().take(k) {
                partial += cm;
                per_jump += partial * partial;
            }
            let jumps: f64 = spec
                .indicator_terms
                .iter()
                .map(|t| 2.0 * t.amplitude * t.amplitude)
                .sum();
            Ok(step * jumps * per_jump)
        }
    }
}

/// `τ_k(vΔ)² = ‖Δ_k^{n,v} g‖²` by quadrature, with its small-step asymptotic companion.
pub fn tau_sq(spec: &WeightSpec, k: usize, v: usize, delta_n: f64, rel_tol: f64) -> Result<ScalingResult> {
    check_filter_args(spec, k, v)?;
    check_delta(spec, k, v, delta_n)?;
    let fk = FilteredKernel::new(spec, k, v, delta_n);
    let q = fk
        .square_integral(0.0, f64::INFINITY, rel_tol)
        .map_err(|e| e.in_op("tau_sq"))?;
    let asym = tau_sq_asymptotic(spec, k, v, delta_n, rel_tol).map_err(|e| e.in_op("tau_sq"))?;
    Ok(ScalingResult {
        tau_sq_exact: q.value,
        tau_sq_asymptotic: asym,
        delta_n,
        k,
        v,
        quadrature_error_estimate: q.error,
    })
}

/// `π^v_{n,k}([a, b])`, with the filtered kernel aligned on its leading
/// point, i.e. density `(Δ_k^{n,v} g)(x + k·vΔ)²`.
pub fn pi_n_measure(spec: &WeightSpec, k: usize, v: usize, delta_n: f64, interval: [f64; 2]) -> Result<f64> {
    pi_n_measure_with_tol(spec, k, v, delta_n, interval, DEFAULT_REL_TOL)
}

pub fn pi_n_measure_with_tol(
    spec: &WeightSpec,
    k: usize,
    v: usize,
    delta_n: f64,
    interval: [f64; 2],
    rel_tol: f64,
) -> Result<f64> {
    let [a, b] = interval;
    if !(a < b) {
        return Err(BssError::InvalidArgument(format!(
            "interval must satisfy a < b, got [{a}, {b}]"
        )));
    }
    check_filter_args(spec, k, v)?;
    check_delta(spec, k, v, delta_n).map_err(|e| match e {
        BssError::Precondition { detail, .. } => BssError::Precondition {
            op: "pi_n_measure",
            detail,
        },
        e => e,
    })?;
    let fk = FilteredKernel::new(spec, k, v, delta_n);
    let shift = k as f64 * fk.step;
    let full = fk
        .square_integral(0.0, f64::INFINITY, rel_tol)
        .map_err(|e| e.in_op("pi_n_measure"))?;
    let part = fk
        .square_integral(a + shift, b + shift, rel_tol)
        .map_err(|e| e.in_op("pi_n_measure"))?;
    Ok((part.value / full.value).clamp(0.0, 1.0))
}

/// Autocovariance `c(t) = ∫ g(u) g(u + t) du` of the Gaussian core.
pub fn autocovariance(spec: &WeightSpec, t: f64, rel_tol: f64) -> Result<f64> {
    let t = t.abs();
    match spec.kind {
        KernelKind::IndicatorSum => Ok(indicator_autocovariance(spec, t)),
        KernelKind::SingularKernel => singular_autocovariance(spec, t, rel_tol),
    }
}

fn indicator_autocovariance(spec: &WeightSpec, t: f64) -> f64 {
    let terms = &spec.indicator_terms;
    let mut total = 0.0;
    for a in terms {
        for b in terms {
            let lo = a.start.max(b.start - t);
            let hi = a.end.min(b.end - t);
            if hi > lo {
                total += a.amplitude * b.amplitude * (hi - lo);
            }
        }
    }
    total
}

#[derive(Debug, Clone, Copy)]
struct PairSite {
    first: crate::weight_model::Site,
    second: crate::weight_model::Site,
}

fn singular_autocovariance(spec: &WeightSpec, t: f64, rel_tol: f64) -> Result<f64> {
    use crate::weight_model::Site;
    if t == 0.0 {
        return Ok(g_norm_sq(spec, rel_tol)
            .map_err(|e| e.in_op("covariance_kernel"))?
            .value);
    }
    let end = spec.support_end();
    let pair = |u: f64| {
        let a = spec.nearest_anchor(u);
        let b = spec.nearest_anchor(u + t);
        PairSite {
            first: Site {
                anchor: a,
                base: u - spec.anchor(a),
            },
            second: Site {
                anchor: b,
                base: (u - spec.anchor(b)) + t,
            },
        }
    };
    let mut nodes: Vec<Node<PairSite>> = Vec::new();
    for (i, s) in spec.segments.iter().enumerate() {
        // u = θ_i: the first factor is singular.
        let mut site = pair(s.theta);
        site.first = Site { anchor: i, base: 0.0 };
        let mut e = s.alpha;
        // u + t may hit another singularity exactly.
        for (j, s2) in spec.segments.iter().enumerate() {
            if s.theta + t == s2.theta {
                site.second = Site { anchor: j, base: 0.0 };
                e += s2.alpha;
            }
        }
        nodes.push(Node::singular(s.theta, site, e));
        // u = θ_i − t: the second factor is singular.
        let u = s.theta - t;
        if u > 0.0 {
            let mut site = pair(u);
            site.second = Site { anchor: i, base: 0.0 };
            nodes.push(Node::singular(u, site, s.alpha));
        }
    }
    for x in spec.blend_points() {
        if x < end {
            nodes.push(Node::regular(x, pair(x)));
        }
        if x - t > 0.0 && x - t < end {
            nodes.push(Node::regular(x - t, pair(x - t)));
        }
    }
    nodes.push(Node::regular(end, pair(end)));
    sort_nodes(&mut nodes);
    nodes.retain(|n| n.x >= 0.0 && n.x <= end);
    let q = integrate_nodes(
        |site, off| spec.eval_site(site.first, off) * spec.eval_site(site.second, off),
        &nodes,
        &QuadOptions::with_rel_tol(rel_tol),
    )
    .map_err(|e| e.in_op("covariance_kernel"))?;
    let cb = spec.baseline_coefficient();
    let lam = spec.tail_rate;
    let tail = cb * cb * (-lam * t).exp() * (-2.0 * lam * end).exp() / (2.0 * lam);
    Ok(q.value + tail)
}

/// Autocovariances at many lags, in parallel when available.
pub fn autocovariances(spec: &WeightSpec, lags: &[f64], rel_tol: f64) -> Result<Vec<f64>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        lags.par_iter().map(|&t| autocovariance(spec, t, rel_tol)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        lags.iter().map(|&t| autocovariance(spec, t, rel_tol)).collect()
    }
}

/// Tabulated correlation kernel `r` with variogram `R(t) = 2‖g‖²(1 − r(t))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceKernel {
    pub g_norm_sq: f64,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl CovarianceKernel {
    /// `r(t)` by linear interpolation; `t` is taken in absolute value and
    /// clamped to the tabulated range.
    pub fn r(&self, t: f64) -> f64 {
        let t = t.abs();
        let g = &self.grid;
        if t <= g[0] {
            return self.values[0];
        }
        if t >= g[g.len() - 1] {
            return self.values[g.len() - 1];
        }
        let i = g.partition_point(|&x| x <= t) - 1;
        let w = (t - g[i]) / (g[i + 1] - g[i]);
        self.values[i] + w * (self.values[i + 1] - self.values[i])
    }

    #[allow(non_snake_case)]
    pub fn R(&self, t: f64) -> f64 {
        2.0 * self.g_norm_sq * (1.0 - self.r(t))
    }
}

/// Maximum bisection depth when refining the correlation table.
const MAX_REFINE_DEPTH: usize = 200;

pub fn covariance_kernel(spec: &WeightSpec, t_grid: &[f64], rel_tol: f64) -> Result<CovarianceKernel> {
    if t_grid.is_empty() {
        return Err(BssError::InvalidArgument("t_grid is empty".into()));
    }
    if t_grid.iter().any(|&t| !(t >= 0.0 && t.is_finite())) || t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(BssError::InvalidArgument(
            "t_grid must be nonnegative and sorted".into(),
        ));
    }
    let quad_tol = (rel_tol * 1e-2).clamp(1e-12, 1e-6);
    let norm = autocovariance(spec, 0.0, quad_tol)?;
    let r_at = |t: f64| autocovariance(spec, t, quad_tol).map(|c| c / norm);
    let mut grid: Vec<f64> = t_grid.to_vec();
    grid.dedup();
    let mut values = autocovariances(spec, &grid, quad_tol)?
        .into_iter()
        .map(|c| c / norm)
        .collect::<Vec<_>>();

    let mut out_g = vec![grid[0]];
    let mut out_v = vec![values[0]];
    for i in 1..grid.len() {
        // Depth-first bisection of [grid[i-1], grid[i]].
        let mut stack = vec![(grid[i - 1], values[i - 1], grid[i], values[i], 0usize)];
        let mut segment = Vec::new();
        while let Some((a, ra, b, rb, depth)) = stack.pop() {
            let mid = 0.5 * (a + b);
            if depth >= MAX_REFINE_DEPTH || mid <= a || mid >= b {
                segment.push((b, rb));
                continue;
            }
            let rm = r_at(mid)?;
            if (rm - 0.5 * (ra + rb)).abs() <= rel_tol {
                segment.push((b, rb));
            } else {
                stack.push((mid, rm, b, rb, depth + 1));
                stack.push((a, ra, mid, rm, depth + 1));
            }
        }
        for (t, r) in segment {
            out_g.push(t);
            out_v.push(r);
        }
    }
    values.clear();
    if out_g[0] == 0.0 {
        out_v[0] = 1.0;
    }
    Ok(CovarianceKernel {
        g_norm_sq: norm,
        grid: out_g,
        values: out_v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weight_model::SingularitySegment;
    use proptest::prelude::*;

    fn two_active(a0: f64, a1: f64, f1: f64) -> WeightSpec {
        WeightSpec::singular(
            vec![
                SingularitySegment::new(0.0, a0, vec![1.0], 0.5),
                SingularitySegment::new(2.0, a1, vec![f1], 0.5),
            ],
            1.0,
        )
    }

    #[test]
    fn h_zero_left_of_support() {
        let spec = WeightSpec::single(-0.3);
        assert_eq!(h_function(&spec, 0, 1, -1.0).unwrap(), 0.0);
    }

    #[test]
    fn h_interior_symmetric_at_midpoint() {
        let spec = two_active(-0.2, -0.2, 1.0);
        assert!(h_function(&spec, 1, 1, 0.5).unwrap().abs() < 1e-15);
    }

    #[test]
    fn h_direct_value() {
        let spec = WeightSpec::singular(vec![SingularitySegment::new(0.0, 0.3, vec![2.0], 0.5)], 1.0);
        let v = h_function(&spec, 0, 1, 0.5).unwrap();
        assert!((v - 2.0 * 0.5f64.powf(0.3)).abs() < 1e-15);
        assert!((v - 1.6245).abs() < 1e-4);
    }

    #[test]
    fn h_rejects_bad_index() {
        assert!(h_function(&WeightSpec::single(-0.2), 1, 1, 0.5).is_err());
    }

    #[test]
    fn h_norm_closed_form_brownian_like() {
        // α → 0 limit is not admissible, but α = 0.4, k = 1 has the closed form
        // Γ(α+1)²/(Γ(2α+2) sin(πH)) with H = α + ½ (unit fBm-increment variance).
        let v = h_norm_sq(&WeightSpec::single(0.4), 0, 1, 1e-10).unwrap();
        assert!((v / 1.51957453621 - 1.0).abs() < 1e-8, "{v}");
    }

    #[test]
    fn h_norm_scales_quadratically() {
        let a = h_norm_sq(&two_active(-0.2, -0.2, 1.0), 1, 2, 1e-9).unwrap();
        let b = h_norm_sq(&two_active(-0.2, -0.2, 3.0), 1, 2, 1e-9).unwrap();
        assert!((b / a - 9.0).abs() < 1e-12);
    }

    #[test]
    fn pi_single_atom() {
        let m = pi_k(&WeightSpec::single(-1.0 / 6.0), 2).unwrap();
        assert_eq!(m.support, vec![0.0]);
        assert_eq!(m.weights, vec![1.0]);
    }

    #[test]
    fn pi_inactive_dropped() {
        let m = pi_k(&two_active(-0.2, 0.3, 1.0), 1).unwrap();
        assert_eq!(m.support, vec![0.0]);
        assert_eq!(m.weights, vec![1.0]);
        assert_eq!(m.h_norms_sq.len(), 2);
    }

    #[test]
    fn pi_two_atoms_weights() {
        let spec = two_active(-0.2, -0.2, 1.0);
        let m = pi_k(&spec, 1).unwrap();
        let h0 = h_norm_sq(&spec, 0, 1, 1e-9).unwrap();
        let h1 = h_norm_sq(&spec, 1, 1, 1e-9).unwrap();
        assert!((m.weights[0] - h0 / (h0 + h1)).abs() < 1e-9);
        assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn indicator_tau_is_two_delta() {
        let spec = WeightSpec::unit_indicator();
        for d in [1e-2, 1e-3] {
            let t = tau_sq(&spec, 1, 1, d, 1e-12).unwrap();
            assert!((t.tau_sq_exact / (2.0 * d) - 1.0).abs() < 1e-10);
            assert!((t.tau_sq_asymptotic / (2.0 * d) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn indicator_half_mass_at_origin() {
        let spec = WeightSpec::unit_indicator();
        let d = 1e-2;
        let p = pi_n_measure(&spec, 1, 1, d, [-d, 0.0]).unwrap();
        assert!((p - 0.5).abs() < 1e-10);
    }

    #[test]
    fn whole_support_has_unit_mass() {
        let spec = two_active(-0.2, -0.2, 1.0);
        let p = pi_n_measure(&spec, 2, 1, 1e-3, [-1.0, 100.0]).unwrap();
        assert!((p - 1.0).abs() < 1e-10);
    }

    #[test]
    fn asymptotic_frequency_ratio() {
        let spec = WeightSpec::single(-0.2);
        let a1 = tau_sq(&spec, 1, 1, 1e-3, 1e-8).unwrap().tau_sq_asymptotic;
        let a2 = tau_sq(&spec, 1, 2, 1e-3, 1e-8).unwrap().tau_sq_asymptotic;
        assert!((a2 / a1 - 2f64.powf(0.6)).abs() < 1e-12);
    }

    #[test]
    fn tau_precondition() {
        let spec = WeightSpec::single(-0.2);
        let e = tau_sq(&spec, 2, 2, 0.1, 1e-8).unwrap_err();
        assert!(matches!(e, BssError::Precondition { .. }));
    }

    #[test]
    fn tau_exact_matches_covariance_route() {
        // E[(Δ_k G)²] = Σ_a Σ_b c_a c_b c((a − b)s): an independent route to τ².
        let spec = two_active(-1.0 / 6.0, -1.0 / 6.0, 0.7);
        let (k, d) = (2usize, 1e-3);
        let t = tau_sq(&spec, k, 1, d, 1e-11).unwrap();
        let c = filter_coefficients(k);
        let mut via_cov = 0.0;
        for (a, ca) in c.iter().enumerate() {
            for (b, cb) in c.iter().enumerate() {
                via_cov += ca * cb * autocovariance(&spec, (a as f64 - b as f64) * d, 1e-13).unwrap();
            }
        }
        assert!((via_cov / t.tau_sq_exact - 1.0).abs() < 1e-6, "{via_cov} {}", t.tau_sq_exact);
    }

    #[test]
    fn covariance_indicator_values() {
        let ck = covariance_kernel(&WeightSpec::unit_indicator(), &[0.0, 0.5, 1.0, 2.0], 1e-6).unwrap();
        assert_eq!(ck.r(0.0), 1.0);
        assert!((ck.r(0.5) - 0.5).abs() < 1e-12);
        assert_eq!(ck.r(1.0), 0.0);
        assert_eq!(ck.r(1.5), 0.0);
    }

    #[test]
    fn covariance_singular_bounded_and_variogram_identity() {
        let spec = WeightSpec::single(-0.3);
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.1).collect();
        let ck = covariance_kernel(&spec, &grid, 1e-4).unwrap();
        assert_eq!(ck.r(0.0), 1.0);
        for &t in &grid {
            let r = ck.r(t);
            assert!(r.abs() <= 1.0 + 1e-12);
            assert_eq!(ck.R(t), 2.0 * ck.g_norm_sq * (1.0 - r));
        }
        // interpolation stays within tolerance at off-grid points
        for t in [0.013, 0.37, 1.234] {
            let exact = autocovariance(&spec, t, 1e-12).unwrap() / ck.g_norm_sq;
            assert!((ck.r(t) - exact).abs() < 2e-4, "t={t}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn pi_n_additive_and_monotone(a in -0.05f64..1.0, w1 in 0.001f64..1.0, w2 in 0.001f64..1.0) {
            let spec = two_active(-0.2, -0.2, 1.0);
            let d = 1e-3;
            let p1 = pi_n_measure(&spec, 1, 1, d, [a, a + w1]).unwrap();
            let p2 = pi_n_measure(&spec, 1, 1, d, [a + w1, a + w1 + w2]).unwrap();
            let p12 = pi_n_measure(&spec, 1, 1, d, [a, a + w1 + w2]).unwrap();
            prop_assert!((p1 + p2 - p12).abs() < 1e-7);
            prop_assert!(p12 + 1e-9 >= p1);
        }
    }
}
