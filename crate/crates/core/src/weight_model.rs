//! Weight functions `g` with finitely many power-law singularities.
//!
//! A [`WeightSpec`] of kind `SingularKernel` places singularities at
//! `0 = θ_0 < θ_1 < … < θ_l`. Inside the window `|x − θ_i| < δ_i` the kernel is
//! exactly `|x − θ_i|^{α_i} f_i(x)` with `f_i` a polynomial in `x − θ_i`.
//! Between windows, and past the last one, the power forms are blended with a
//! C^∞ transition into the baseline `c_b·e^{−λx}`, where `c_b` is fixed so the
//! baseline meets the first power form at the edge of its window.
//!
//! The `IndicatorSum` kind, `Σ a_i 1_{[s_i, e_i]}`, has jumps instead of power
//! singularities and exists to reproduce the indicator-kernel measures.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{BssError, Result};
use crate::quadrature::{integrate_nodes, Node, QuadOptions, Quadrature};

/// Largest admissible polynomial degree of a smooth factor `f_i`.
pub const MAX_SMOOTH_DEGREE: usize = 6;

/// Largest supported filter order.
pub const MAX_FILTER_ORDER: usize = 6;

/// Tolerance for deciding `α_i = α` when forming the active set.
pub const ACTIVE_SET_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    SingularKernel,
    IndicatorSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularitySegment {
    pub theta: f64,
    pub alpha: f64,
    /// Coefficients of `f_i` in powers of `x − θ_i`, constant term first.
    pub f_coeffs: Vec<f64>,
    pub half_width: f64,
}

impl SingularitySegment {
    pub fn new(theta: f64, alpha: f64, f_coeffs: Vec<f64>, half_width: f64) -> Self {
        Self {
            theta,
            alpha,
            f_coeffs,
            half_width,
        }
    }

    /// `f_i(θ_i)`.
    pub fn leading_coefficient(&self) -> f64 {
        self.f_coeffs.first().copied().unwrap_or(0.0)
    }

    fn smooth_factor(&self, d: f64) -> f64 {
        self.f_coeffs.iter().rev().fold(0.0, |acc, &c| acc * d + c)
    }

    /// `|d|^α f(θ + d)` with the convention that the value at `d = 0` is 0.
    #[inline]
    pub fn power_form(&self, d: f64) -> f64 {
        if d == 0.0 {
            0.0
        } else {
            d.abs().powf(self.alpha) * self.smooth_factor(d)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorTerm {
    pub amplitude: f64,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub kind: KernelKind,
    #[serde(default = "default_tail_rate")]
    pub tail_rate: f64,
    #[serde(default = "default_max_filter_order")]
    pub max_filter_order: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<SingularitySegment>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub indicator_terms: Vec<IndicatorTerm>,
}

fn default_tail_rate() -> f64 {
    1.0
}

fn default_max_filter_order() -> usize {
    4
}

/// Where a quadrature node sits: `x = θ_anchor + base`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Site {
    pub anchor: usize,
    pub base: f64,
}

/// Polynomial smoothstep `u^{N+1} Σ_{j≤N} C(N+j, j)(1−u)^j`: 0 below 0, 1 above 1,
/// with derivatives up to order `N` vanishing at both ends.
fn smooth_step(u: f64, order: usize) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    let n = order;
    let mut sum = 0.0;
    let mut binom = 1.0;
    let mut pw = 1.0;
    for j in 0..=n {
        sum += binom * pw;
        binom = binom * (n + j + 1) as f64 / (j + 1) as f64;
        pw *= 1.0 - u;
    }
    u.powi(n as i32 + 1) * sum
}

impl WeightSpec {
    pub fn singular(segments: Vec<SingularitySegment>, tail_rate: f64) -> Self {
        Self {
            kind: KernelKind::SingularKernel,
            tail_rate,
            max_filter_order: default_max_filter_order(),
            segments,
            indicator_terms: Vec::new(),
        }
    }

    /// One singularity at the origin with `f ≡ 1`, window half-width ½ and unit tail rate.
    pub fn single(alpha: f64) -> Self {
        Self::singular(vec![SingularitySegment::new(0.0, alpha, vec![1.0], 0.5)], 1.0)
    }

    pub fn indicator(terms: Vec<IndicatorTerm>) -> Self {
        Self {
            kind: KernelKind::IndicatorSum,
            tail_rate: default_tail_rate(),
            max_filter_order: default_max_filter_order(),
            segments: Vec::new(),
            indicator_terms: terms,
        }
    }

    /// `1_{[0,1]}`.
    pub fn unit_indicator() -> Self {
        Self::indicator(vec![IndicatorTerm {
            amplitude: 1.0,
            start: 0.0,
            end: 1.0,
        }])
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| BssError::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| BssError::Parse(e.to_string()))
    }

    /// Continuity order of the blend weights.
    fn blend_order(&self) -> usize {
        self.max_filter_order.min(MAX_FILTER_ORDER) + 1
    }

    pub fn is_singular(&self) -> bool {
        self.kind == KernelKind::SingularKernel
    }

    /// Singularity locations (singular kernels) or jump points (indicator sums), ascending.
    pub fn anchors(&self) -> Vec<f64> {
        match self.kind {
            KernelKind::SingularKernel => self.segments.iter().map(|s| s.theta).collect(),
            KernelKind::IndicatorSum => self
                .indicator_terms
                .iter()
                .flat_map(|t| [t.start, t.end])
                .collect(),
        }
    }

    pub(crate) fn anchor(&self, a: usize) -> f64 {
        match self.kind {
            KernelKind::SingularKernel => self.segments[a].theta,
            KernelKind::IndicatorSum => {
                let t = &self.indicator_terms[a / 2];
                if a % 2 == 0 {
                    t.start
                } else {
                    t.end
                }
            }
        }
    }

    pub(crate) fn anchor_count(&self) -> usize {
        match self.kind {
            KernelKind::SingularKernel => self.segments.len(),
            KernelKind::IndicatorSum => 2 * self.indicator_terms.len(),
        }
    }

    /// Smallest gap between consecutive singularities (`None` for l = 0).
    pub fn min_spacing(&self) -> Option<f64> {
        let th = self.anchors();
        match self.kind {
            KernelKind::SingularKernel => th
                .windows(2)
                .map(|w| w[1] - w[0])
                .reduce(f64::min),
            KernelKind::IndicatorSum => None,
        }
    }

    /// Coefficient of the exponential baseline.
    pub fn baseline_coefficient(&self) -> f64 {
        match self.segments.first() {
            Some(s0) => s0.power_form(s0.half_width) * (self.tail_rate * s0.half_width).exp(),
            None => 0.0,
        }
    }

    fn baseline(&self, x: f64) -> f64 {
        self.baseline_coefficient() * (-self.tail_rate * x).exp()
    }

    /// Beyond this point `g` is exactly `c_b e^{−λx}` (singular kernels) or zero (indicators).
    pub fn support_end(&self) -> f64 {
        match self.kind {
            KernelKind::SingularKernel => self
                .segments
                .last()
                .map(|s| s.theta + 2.0 * s.half_width)
                .unwrap_or(0.0),
            KernelKind::IndicatorSum => self
                .indicator_terms
                .iter()
                .map(|t| t.end)
                .fold(0.0, f64::max),
        }
    }

    /// Boundaries of the blend zones, where `g` switches between formulas.
    pub(crate) fn blend_points(&self) -> Vec<f64> {
        let mut pts = Vec::new();
        if !self.is_singular() {
            return pts;
        }
        for w in self.segments.windows(2) {
            let e = w[0].theta + w[0].half_width;
            let s = w[1].theta - w[1].half_width;
            pts.extend([e, 0.5 * (e + s), s]);
        }
        if let Some(last) = self.segments.last() {
            pts.extend([last.theta + last.half_width, last.theta + 2.0 * last.half_width]);
        }
        pts
    }

    /// `g(θ_anchor + off)`, with `off` the exact offset from the anchor.
    pub fn eval_local(&self, anchor: usize, off: f64) -> f64 {
        match self.kind {
            KernelKind::SingularKernel => self.eval_singular(anchor, off),
            KernelKind::IndicatorSum => self.eval_indicator(anchor, off),
        }
    }

    fn eval_singular(&self, a: usize, off: f64) -> f64 {
        let segs = &self.segments;
        let th_a = segs[a].theta;
        let x = th_a + off;
        let local = |i: usize| {
            if i == a {
                off
            } else {
                (th_a - segs[i].theta) + off
            }
        };
        if (a == 0 && off <= 0.0) || x <= 0.0 {
            return 0.0;
        }
        for (i, s) in segs.iter().enumerate() {
            let d = local(i);
            if d.abs() < s.half_width && (i > 0 || d > 0.0) {
                return s.power_form(d);
            }
        }
        for i in 0..segs.len().saturating_sub(1) {
            let e = segs[i].theta + segs[i].half_width;
            let s = segs[i + 1].theta - segs[i + 1].half_width;
            if x >= e && x <= s {
                let half = 0.5 * (s - e);
                if half <= 0.0 {
                    return 0.5 * (segs[i].power_form(local(i)) + segs[i + 1].power_form(local(i + 1)));
                }
                let b = self.baseline(x);
                return if x - e <= half {
                    let w = smooth_step((x - e) / half, self.blend_order());
                    (1.0 - w) * segs[i].power_form(local(i)) + w * b
                } else {
                    let w = smooth_step((s - x) / half, self.blend_order());
                    (1.0 - w) * segs[i + 1].power_form(local(i + 1)) + w * b
                };
            }
        }
        let l = segs.len() - 1;
        let e = segs[l].theta + segs[l].half_width;
        let b = self.baseline(x);
        if x - e <= segs[l].half_width {
            let w = smooth_step((x - e) / segs[l].half_width, self.blend_order());
            (1.0 - w) * segs[l].power_form(local(l)) + w * b
        } else {
            b
        }
    }

    fn eval_indicator(&self, a: usize, off: f64) -> f64 {
        let x = self.anchor(a) + off;
        let mut total = 0.0;
        for (i, t) in self.indicator_terms.iter().enumerate() {
            let after_start = if a == 2 * i { off >= 0.0 } else { x >= t.start };
            let before_end = if a == 2 * i + 1 { off <= 0.0 } else { x <= t.end };
            if after_start && before_end {
                total += t.amplitude;
            }
        }
        total
    }

    /// Index of the anchor closest to `x`.
    pub(crate) fn nearest_anchor(&self, x: f64) -> usize {
        let n = self.anchor_count();
        let mut best = 0;
        let mut dist = f64::INFINITY;
        for a in 0..n {
            let d = (x - self.anchor(a)).abs();
            if d < dist {
                dist = d;
                best = a;
            }
        }
        best
    }

    /// Evaluate `g` at `θ_anchor + base + off`, where `base` may be zero
    /// (exact node) or an arbitrary displacement.
    #[inline]
    pub(crate) fn eval_site(&self, site: Site, off: f64) -> f64 {
        self.eval_local(site.anchor, site.base + off)
    }

    /// Site for an arbitrary absolute abscissa.
    pub(crate) fn site_for(&self, x: f64) -> Site {
        let a = self.nearest_anchor(x);
        Site {
            anchor: a,
            base: x - self.anchor(a),
        }
    }
}

/// `g(x)`; zero for `x ≤ 0`.
pub fn eval_g(spec: &WeightSpec, x: f64) -> f64 {
    if spec.anchor_count() == 0 {
        return 0.0;
    }
    let site = spec.site_for(x);
    spec.eval_site(site, 0.0)
}

/// Alternating binomial weights `(−1)^j C(k, j)`, `j = 0..=k`.
pub fn filter_coefficients(k: usize) -> Vec<f64> {
    let mut c = Vec::with_capacity(k + 1);
    let mut b = 1.0f64;
    for j in 0..=k {
        c.push(if j % 2 == 0 { b } else { -b });
        b = b * (k - j) as f64 / (j + 1) as f64;
    }
    c
}

pub(crate) fn check_filter_args(spec: &WeightSpec, k: usize, v: usize) -> Result<()> {
    if k < 1 {
        return Err(BssError::InvalidArgument("filter order k must be at least 1".into()));
    }
    if !(v == 1 || v == 2) {
        return Err(BssError::InvalidArgument(format!("frequency multiplier v must be 1 or 2, got {v}")));
    }
    if k > spec.max_filter_order {
        return Err(BssError::InvalidArgument(format!(
            "filter order {k} exceeds the kernel's max_filter_order {}",
            spec.max_filter_order
        )));
    }
    Ok(())
}

/// `Σ_j (−1)^j C(k,j) g(x − j·vΔ)`.
pub fn filtered_g(spec: &WeightSpec, k: usize, v: usize, delta_n: f64, x: f64) -> Result<f64> {
    check_filter_args(spec, k, v)?;
    let step = v as f64 * delta_n;
    Ok(filter_coefficients(k)
        .iter()
        .enumerate()
        .map(|(j, c)| c * eval_g(spec, x - j as f64 * step))
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessSummary {
    pub alpha_min: f64,
    pub active_set: Vec<usize>,
    pub robustness_ok: bool,
    pub clt_k1_ok: bool,
}

pub fn summarize_smoothness(spec: &WeightSpec) -> Result<SmoothnessSummary> {
    if !spec.is_singular() {
        return Err(BssError::InvalidArgument(
            "smoothness summary is undefined for indicator-sum kernels".into(),
        ));
    }
    if spec.segments.is_empty() {
        return Err(BssError::InvalidArgument("kernel has no singularities".into()));
    }
    let alpha_min = spec
        .segments
        .iter()
        .map(|s| s.alpha)
        .fold(f64::INFINITY, f64::min);
    let active_set: Vec<usize> = spec
        .segments
        .iter()
        .enumerate()
        .filter(|(_, s)| (s.alpha - alpha_min).abs() <= ACTIVE_SET_TOL)
        .map(|(i, _)| i)
        .collect();
    let robustness_ok = spec
        .segments
        .iter()
        .enumerate()
        .filter(|(i, _)| !active_set.contains(i))
        .all(|(_, s)| s.alpha - alpha_min > 0.25);
    let clt_k1_ok = spec.segments.iter().all(|s| s.alpha < 0.0);
    Ok(SmoothnessSummary {
        alpha_min,
        active_set,
        robustness_ok,
        clt_k1_ok,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "diagnostic", rename_all = "snake_case")]
pub enum Diagnostic {
    EmptyKernel,
    NonFinite { field: String },
    FirstSingularityNotAtOrigin { theta: f64 },
    Ordering { index: usize, theta: f64, previous: f64 },
    ExponentRange { index: usize, alpha: f64 },
    SmoothFactorVanishes { index: usize },
    SmoothFactorDegree { index: usize, degree: usize },
    HalfWidthNonPositive { index: usize, half_width: f64 },
    HalfWidthTooLarge { index: usize, half_width: f64, bound: f64 },
    TailRate { tail_rate: f64 },
    FilterOrder { max_filter_order: usize },
    NotSquareIntegrable { detail: String },
    Smoothness { location: f64, order: usize, left: f64, right: f64 },
    IndicatorInterval { index: usize, start: f64, end: f64 },
    IndicatorOverlap { index: usize },
    IndicatorAmplitude { index: usize },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Diagnostic::*;
        match self {
            EmptyKernel => write!(f, "kernel has no singularities or indicator terms"),
            NonFinite { field } => write!(f, "non-finite value in {field}"),
            FirstSingularityNotAtOrigin { theta } => {
                write!(f, "first singularity must sit at 0, found {theta}")
            }
            Ordering {
                index,
                theta,
                previous,
            } => write!(
                f,
                "ordering: theta[{index}] = {theta} is not greater than theta[{}] = {previous}",
                index - 1
            ),
            ExponentRange { index, alpha } => write!(
                f,
                "exponent range: alpha[{index}] = {alpha} not in (-0.5, 0) or (0, 0.5)"
            ),
            SmoothFactorVanishes { index } => {
                write!(f, "smooth factor of segment {index} vanishes at its singularity")
            }
            SmoothFactorDegree { index, degree } => write!(
                f,
                "smooth factor of segment {index} has degree {degree} > {MAX_SMOOTH_DEGREE}"
            ),
            HalfWidthNonPositive { index, half_width } => {
                write!(f, "half-width of segment {index} must be positive, got {half_width}")
            }
            HalfWidthTooLarge {
                index,
                half_width,
                bound,
            } => write!(
                f,
                "half-width of segment {index} is {half_width}, exceeding half the minimum spacing {bound}"
            ),
            TailRate { tail_rate } => write!(f, "tail rate must be positive and finite, got {tail_rate}"),
            FilterOrder { max_filter_order } => {
                write!(f, "max_filter_order must lie in 1..={MAX_FILTER_ORDER}, got {max_filter_order}")
            }
            NotSquareIntegrable { detail } => write!(f, "g is not numerically square integrable: {detail}"),
            Smoothness {
                location,
                order,
                left,
                right,
            } => write!(
                f,
                "derivative of order {order} is discontinuous at x = {location} (left {left:e}, right {right:e})"
            ),
            IndicatorInterval { index, start, end } => write!(
                f,
                "indicator term {index} needs 0 <= start < end, got [{start}, {end}]"
            ),
            IndicatorOverlap { index } => {
                write!(f, "indicator term {index} overlaps or precedes its predecessor")
            }
            IndicatorAmplitude { index } => write!(f, "indicator term {index} has zero amplitude"),
        }
    }
}

/// Quadrature nodes for `g²`: singular anchors plus blend boundaries, up to
/// the end of the non-baseline part.
pub(crate) fn square_nodes(spec: &WeightSpec) -> Vec<Node<Site>> {
    let mut nodes: Vec<Node<Site>> = Vec::new();
    match spec.kind {
        KernelKind::SingularKernel => {
            for (i, s) in spec.segments.iter().enumerate() {
                let site = Site { anchor: i, base: 0.0 };
                nodes.push(Node::singular(s.theta, site, square_exponent(s.alpha)));
            }
            for x in spec.blend_points() {
                nodes.push(Node::regular(x, spec.site_for(x)));
            }
        }
        KernelKind::IndicatorSum => {
            for a in 0..spec.anchor_count() {
                nodes.push(Node::regular(spec.anchor(a), Site { anchor: a, base: 0.0 }));
            }
        }
    }
    sort_nodes(&mut nodes);
    nodes
}

/// Leading exponent of a squared power form `|d|^{2α}` for node grading.
pub(crate) fn square_exponent(alpha: f64) -> f64 {
    if alpha < 0.0 {
        2.0 * alpha
    } else {
        alpha
    }
}

pub(crate) fn sort_nodes<T>(nodes: &mut Vec<Node<T>>) {
    nodes.sort_by(|a, b| a.x.total_cmp(&b.x));
    // Merge coincident points, keeping the singular one.
    let mut out: Vec<Node<T>> = Vec::with_capacity(nodes.len());
    for n in nodes.drain(..) {
        if let Some(last) = out.last_mut() {
            if n.x == last.x {
                if last.exponent.is_none() && n.exponent.is_some() {
                    *last = n;
                }
                continue;
            }
        }
        out.push(n);
    }
    *nodes = out;
}

/// `‖g‖²_{L²}` via singularity-graded quadrature plus the analytic baseline tail.
pub fn g_norm_sq(spec: &WeightSpec, rel_tol: f64) -> Result<Quadrature> {
    if spec.anchor_count() == 0 {
        return Err(BssError::InvalidSpec(vec![Diagnostic::EmptyKernel]));
    }
    if !spec.is_singular() {
        let mut total = 0.0;
        for t in &spec.indicator_terms {
            total += t.amplitude * t.amplitude * (t.end - t.start);
        }
        return Ok(Quadrature {
            value: total,
            error: 0.0,
            intervals: 0,
        });
    }
    let nodes = square_nodes(spec);
    let q = integrate_nodes(
        |site, off| {
            let v = spec.eval_site(site, off);
            v * v
        },
        &nodes,
        &QuadOptions::with_rel_tol(rel_tol),
    )?;
    let end = spec.support_end();
    let cb = spec.baseline_coefficient();
    let lam = spec.tail_rate;
    let tail = cb * cb * (-2.0 * lam * end).exp() / (2.0 * lam);
    Ok(Quadrature {
        value: q.value + tail,
        ..q
    })
}

/// One-sided estimate of `g^{(order)}(x)` from the side `dir = ±1`:
/// forward differences at two step sizes combined by Richardson extrapolation.
fn one_sided_derivative(spec: &WeightSpec, x: f64, order: usize, eps: f64, dir: f64) -> f64 {
    let diff = |h: f64| {
        let c = filter_coefficients(order);
        // points x + dir·(r + ½)h, r = 0..=order, all strictly on one side
        let mut acc = 0.0;
        for (r, cr) in c.iter().enumerate() {
            acc += cr * eval_g(spec, x + dir * (r as f64 + 0.5) * h);
        }
        // Σ (−1)^r C(m,r) f(x + r·dir·h) = (−dir·h)^m f^{(m)} + …
        let sign = if order % 2 == 0 { 1.0 } else { -dir };
        sign * acc / h.powi(order as i32)
    };
    2.0 * diff(eps) - diff(2.0 * eps)
}

fn smoothness_diagnostics(spec: &WeightSpec) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let min_half = spec
        .segments
        .iter()
        .map(|s| s.half_width)
        .fold(f64::INFINITY, f64::min);
    let k = spec.max_filter_order.min(MAX_FILTER_ORDER);
    for x in spec.blend_points() {
        let level = eval_g(spec, x).abs().max(eval_g(spec, x + 0.1 * min_half).abs());
        for order in 0..=k {
            let eps = min_half * 2e-3 * (1.0 + order as f64);
            // Two extrapolation levels per side; their spread bounds the bias.
            let side = |dir: f64| {
                let a = one_sided_derivative(spec, x, order, eps, dir);
                let b = one_sided_derivative(spec, x, order, 0.5 * eps, dir);
                ((4.0 * b - a) / 3.0, (b - a).abs())
            };
            let (l, ul) = side(-1.0);
            let (r, ur) = side(1.0);
            let bias = 2.0 * (ul + ur);
            let floor = 1e-12 * level * 4f64.powi(order as i32) / eps.powi(order as i32);
            let scale = l.abs().max(r.abs()).max(level);
            if !(l.is_finite() && r.is_finite()) || (l - r).abs() > 1e-2 * scale + bias + floor {
                out.push(Diagnostic::Smoothness {
                    location: x,
                    order,
                    left: l,
                    right: r,
                });
                break;
            }
        }
    }
    out
}

/// Check every structural condition on the kernel; an empty list means valid.
pub fn validate(spec: &WeightSpec) -> Vec<Diagnostic> {
    let mut d = Vec::new();
    if !(1..=MAX_FILTER_ORDER).contains(&spec.max_filter_order) {
        d.push(Diagnostic::FilterOrder {
            max_filter_order: spec.max_filter_order,
        });
    }
    match spec.kind {
        KernelKind::SingularKernel => {
            let segs = &spec.segments;
            if segs.is_empty() {
                d.push(Diagnostic::EmptyKernel);
                return d;
            }
            if !(spec.tail_rate.is_finite() && spec.tail_rate > 0.0) {
                d.push(Diagnostic::TailRate {
                    tail_rate: spec.tail_rate,
                });
            }
            for (i, s) in segs.iter().enumerate() {
                if !(s.theta.is_finite() && s.alpha.is_finite() && s.half_width.is_finite())
                    || s.f_coeffs.iter().any(|c| !c.is_finite())
                {
                    d.push(Diagnostic::NonFinite {
                        field: format!("segments[{i}]"),
                    });
                    continue;
                }
                if i == 0 && s.theta != 0.0 {
                    d.push(Diagnostic::FirstSingularityNotAtOrigin { theta: s.theta });
                }
                if i > 0 && s.theta <= segs[i - 1].theta {
                    d.push(Diagnostic::Ordering {
                        index: i,
                        theta: s.theta,
                        previous: segs[i - 1].theta,
                    });
                }
                if !(s.alpha > -0.5 && s.alpha < 0.5) || s.alpha == 0.0 {
                    d.push(Diagnostic::ExponentRange {
                        index: i,
                        alpha: s.alpha,
                    });
                }
                if s.leading_coefficient() == 0.0 {
                    d.push(Diagnostic::SmoothFactorVanishes { index: i });
                }
                if s.f_coeffs.len() > MAX_SMOOTH_DEGREE + 1 {
                    d.push(Diagnostic::SmoothFactorDegree {
                        index: i,
                        degree: s.f_coeffs.len() - 1,
                    });
                }
                if s.half_width <= 0.0 {
                    d.push(Diagnostic::HalfWidthNonPositive {
                        index: i,
                        half_width: s.half_width,
                    });
                }
            }
            if let Some(spacing) = spec.min_spacing() {
                let bound = 0.5 * spacing;
                for (i, s) in segs.iter().enumerate() {
                    if s.half_width > bound {
                        d.push(Diagnostic::HalfWidthTooLarge {
                            index: i,
                            half_width: s.half_width,
                            bound,
                        });
                    }
                }
            }
            if !d.is_empty() {
                return d;
            }
            match g_norm_sq(spec, 1e-8) {
                Ok(q) if q.value.is_finite() && q.error <= 1e-8 * q.value.abs() => {}
                Ok(q) => d.push(Diagnostic::NotSquareIntegrable {
                    detail: format!("value {:e} with error {:e}", q.value, q.error),
                }),
                Err(e) => d.push(Diagnostic::NotSquareIntegrable {
                    detail: e.to_string(),
                }),
            }
            d.extend(smoothness_diagnostics(spec));
        }
        KernelKind::IndicatorSum => {
            if spec.indicator_terms.is_empty() {
                d.push(Diagnostic::EmptyKernel);
            }
            for (i, t) in spec.indicator_terms.iter().enumerate() {
                if !(t.start.is_finite() && t.end.is_finite() && t.amplitude.is_finite()) {
                    d.push(Diagnostic::NonFinite {
                        field: format!("indicator_terms[{i}]"),
                    });
                    continue;
                }
                if !(t.start >= 0.0 && t.start < t.end) {
                    d.push(Diagnostic::IndicatorInterval {
                        index: i,
                        start: t.start,
                        end: t.end,
                    });
                }
                if t.amplitude == 0.0 {
                    d.push(Diagnostic::IndicatorAmplitude { index: i });
                }
                if i > 0 && t.start <= spec.indicator_terms[i - 1].end {
                    d.push(Diagnostic::IndicatorOverlap { index: i });
                }
            }
        }
    }
    d
}

/// Reject a spec with any diagnostics.
pub fn ensure_valid(spec: &WeightSpec) -> Result<()> {
    let d = validate(spec);
    if d.is_empty() {
        Ok(())
    } else {
        Err(BssError::InvalidSpec(d))
    }
}
