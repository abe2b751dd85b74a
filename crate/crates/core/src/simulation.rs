//! Path simulation: the Gaussian core and fractional Brownian motion exactly by
//! circulant embedding, and BSS paths with time-varying intermittency by a
//! truncated Riemann scheme on a refined grid.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{BssError, Result};
use crate::limit_quantities::autocovariances;
use crate::quadrature::{integrate_nodes, Node, QuadOptions};
use crate::weight_model::{ensure_valid, eval_g, Site, WeightSpec};

/// Largest number of observations per path.
pub const MAX_OBSERVATIONS: f64 = 1e7;
/// Largest number of inner cells in the Riemann scheme.
pub const MAX_INNER_CELLS: usize = 1 << 26;
/// Largest matrix size for the dense fallback.
pub const MAX_DENSE: usize = 1 << 14;
/// Negative embedding eigenvalues above `−EIGEN_TOL·c(0)` are set to zero.
pub const EIGEN_TOL: f64 = 1e-8;

const COV_TOL: f64 = 1e-11;

/// Mix a master seed and a stream index into an independent 64-bit seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub delta_n: f64,
    pub horizon: f64,
    /// Inner sub-steps per observation step.
    pub refinement: usize,
    /// Kernel memory cutoff `T_cut`.
    pub truncation: f64,
}

impl GridSpec {
    pub fn new(delta_n: f64, horizon: f64, refinement: usize, truncation: f64) -> Self {
        Self {
            delta_n,
            horizon,
            refinement,
            truncation,
        }
    }

    /// `⌊t/Δ⌋ + 1`.
    pub fn n_points(&self) -> usize {
        (self.horizon / self.delta_n * (1.0 + 1e-12)).floor() as usize + 1
    }

    fn check_basic(&self) -> Result<()> {
        if !(self.delta_n > 0.0 && self.delta_n.is_finite()) {
            return Err(BssError::InvalidArgument(format!("delta_n must be positive, got {}", self.delta_n)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(BssError::InvalidArgument(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.horizon / self.delta_n > MAX_OBSERVATIONS {
            return Err(BssError::ResourceGuard(format!(
                "horizon/delta_n = {} exceeds {MAX_OBSERVATIONS}",
                self.horizon / self.delta_n
            )));
        }
        Ok(())
    }

    /// Check the grid against the kernel it will simulate.
    pub fn validate_for(&self, spec: &WeightSpec) -> Result<()> {
        self.check_basic()?;
        if self.refinement < 1 {
            return Err(BssError::InvalidArgument("refinement must be at least 1".into()));
        }
        let needed = match spec.segments.last() {
            Some(s) => s.theta + s.half_width,
            None => spec.support_end(),
        };
        if !(self.truncation > needed) {
            return Err(BssError::InvalidArgument(format!(
                "truncation T_cut = {} must exceed {needed}",
                self.truncation
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IntermittencySpec {
    Constant {
        c: f64,
    },
    /// `σ(t) = c0 + Σ_m (a_m cos(mωt) + b_m sin(mωt))`.
    Deterministic {
        c0: f64,
        cos: Vec<f64>,
        sin: Vec<f64>,
        omega: f64,
    },
    /// `σ = exp(Y)` with `dY = −κ Y dt + ξ dB`, `B` independent of `W`.
    ExpOu {
        kappa: f64,
        xi: f64,
        y0: f64,
    },
}

impl IntermittencySpec {
    /// Parse `const:c`, `trig:c0,a1,b1,...[@omega]` or `expou:kappa,xi,y0`.
    pub fn parse(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| BssError::Parse(format!("sigma spec '{s}' lacks a 'kind:' prefix")))?;
        let nums = |t: &str| -> Result<Vec<f64>> {
            t.split(',')
                .filter(|p| !p.trim().is_empty())
                .map(|p| {
                    p.trim()
                        .parse::<f64>()
                        .map_err(|e| BssError::Parse(format!("sigma parameter '{p}': {e}")))
                })
                .collect()
        };
        let spec = match kind {
            "const" => {
                let v = nums(rest)?;
                if v.len() != 1 {
                    return Err(BssError::Parse("const sigma takes one value".into()));
                }
                IntermittencySpec::Constant { c: v[0] }
            }
            "trig" => {
                let (coeffs, omega) = match rest.split_once('@') {
                    Some((c, w)) => (
                        c,
                        w.trim()
                            .parse::<f64>()
                            .map_err(|e| BssError::Parse(format!("omega: {e}")))?,
                    ),
                    None => (rest, 1.0),
                };
                let v = nums(coeffs)?;
                if v.is_empty() || v.len() % 2 == 0 {
                    return Err(BssError::Parse(
                        "trig sigma takes c0 followed by (cos, sin) pairs".into(),
                    ));
                }
                IntermittencySpec::Deterministic {
                    c0: v[0],
                    cos: v[1..].iter().step_by(2).copied().collect(),
                    sin: v[2..].iter().step_by(2).copied().collect(),
                    omega,
                }
            }
            "expou" => {
                let v = nums(rest)?;
                if v.len() != 3 {
                    return Err(BssError::Parse("expou sigma takes kappa,xi,y0".into()));
                }
                IntermittencySpec::ExpOu {
                    kappa: v[0],
                    xi: v[1],
                    y0: v[2],
                }
            }
            other => return Err(BssError::Parse(format!("unknown sigma kind '{other}'"))),
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<()> {
        let finite = |x: &f64| x.is_finite();
        let ok = match self {
            IntermittencySpec::Constant { c } => c.is_finite(),
            IntermittencySpec::Deterministic { c0, cos, sin, omega } => {
                c0.is_finite() && cos.iter().all(finite) && sin.iter().all(finite) && omega.is_finite()
            }
            IntermittencySpec::ExpOu { kappa, xi, y0 } => {
                *kappa > 0.0 && kappa.is_finite() && xi.is_finite() && *xi >= 0.0 && y0.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(BssError::InvalidArgument(format!("invalid intermittency parameters: {self:?}")))
        }
    }

    /// `σ(t)` for the non-random kinds.
    pub fn eval(&self, t: f64) -> Option<f64> {
        match self {
            IntermittencySpec::Constant { c } => Some(*c),
            IntermittencySpec::Deterministic { c0, cos, sin, omega } => {
                let mut v = *c0;
                for (m, a) in cos.iter().enumerate() {
                    v += a * ((m + 1) as f64 * omega * t).cos();
                }
                for (m, b) in sin.iter().enumerate() {
                    v += b * ((m + 1) as f64 * omega * t).sin();
                }
                Some(v)
            }
            IntermittencySpec::ExpOu { .. } => None,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, IntermittencySpec::Constant { .. })
    }

    /// Hölder regularity above ½, as the CLT requires.
    pub fn clt_compliant(&self) -> bool {
        !matches!(self, IntermittencySpec::ExpOu { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    GaussianCore,
    Bss,
    Fbm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub values: Vec<f64>,
    pub grid: GridSpec,
    pub seed: u64,
    pub kind: PathKind,
    pub sigma_values: Option<Vec<f64>>,
}

impl PathSample {
    pub fn times(&self) -> Vec<f64> {
        (0..self.values.len()).map(|i| i as f64 * self.grid.delta_n).collect()
    }
}

/// Square roots of the circulant eigenvalues, scaled for an FFT of length `m`.
struct Embedding {
    sqrt_eig: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Embedding {
    /// Circulant embedding of the first row `cov[0..=half]`; `None` when it has
    /// eigenvalues below the tolerance.
    fn try_new(cov: &[f64], size: usize) -> (Option<Self>, f64) {
        let half = size / 2;
        debug_assert!(cov.len() > half);
        let mut row: Vec<Complex<f64>> = (0..size)
            .map(|i| Complex::new(if i <= half { cov[i] } else { cov[size - i] }, 0.0))
            .collect();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(size);
        fft.process(&mut row);
        let min = row.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        if min < -EIGEN_TOL * cov[0].abs() {
            return (None, min);
        }
        let sqrt_eig = row
            .iter()
            .map(|z| (z.re.max(0.0) / size as f64).sqrt())
            .collect();
        (Some(Self { sqrt_eig, fft }), min)
    }

    fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = self
            .sqrt_eig
            .iter()
            .map(|&s| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                Complex::new(s * a, s * b)
            })
            .collect();
        self.fft.process(&mut buf);
        buf.iter().take(n).map(|z| z.re).collect()
    }
}

enum Factor {
    Circulant(Embedding),
    Dense(DMatrix<f64>),
}

/// Reusable exact sampler for a stationary Gaussian sequence with a given
/// autocovariance at lags `0..n`.
pub struct StationarySampler {
    n: usize,
    factor: Factor,
    /// Size of the embedding that succeeded (0 for the dense route).
    pub embedding_size: usize,
}

impl StationarySampler {
    /// `cov_at(m)` returns autocovariances for lags `0..m`.
    fn build<F>(n: usize, cov_at: F, op: &'static str) -> Result<Self>
    where
        F: Fn(usize) -> Result<Vec<f64>>,
    {
        if n == 0 {
            return Err(BssError::InvalidArgument("need at least one point".into()));
        }
        if n == 1 {
            let c = cov_at(1)?;
            return Ok(Self {
                n,
                factor: Factor::Dense(DMatrix::from_element(1, 1, c[0].max(0.0).sqrt())),
                embedding_size: 0,
            });
        }
        let base = (2 * (n - 1)).next_power_of_two();
        let mut worst = f64::INFINITY;
        let mut cov = cov_at(base / 2 + 1)?;
        for pad in [1usize, 2, 4] {
            let size = base * pad;
            if cov.len() < size / 2 + 1 {
                cov = cov_at(size / 2 + 1)?;
            }
            let (emb, min) = Embedding::try_new(&cov, size);
            worst = worst.min(min);
            if let Some(e) = emb {
                return Ok(Self {
                    n,
                    factor: Factor::Circulant(e),
                    embedding_size: size,
                });
            }
        }
        if n > MAX_DENSE {
            return Err(BssError::NotPositiveDefinite {
                op,
                min_eigenvalue: worst,
            });
        }
        let m = DMatrix::from_fn(n, n, |i, j| cov[i.abs_diff(j)]);
        match m.cholesky() {
            Some(ch) => Ok(Self {
                n,
                factor: Factor::Dense(ch.l()),
                embedding_size: 0,
            }),
            None => Err(BssError::NotPositiveDefinite {
                op,
                min_eigenvalue: worst,
            }),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match &self.factor {
            Factor::Circulant(e) => e.sample(rng, self.n),
            Factor::Dense(l) => {
                let z = DVector::from_fn(self.n, |_, _| rng.sample::<f64, _>(StandardNormal));
                (l * z).iter().copied().collect()
            }
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// Exact sampler for the Gaussian core `G` on the grid `0, Δ, …, (n−1)Δ`.
pub fn gaussian_core_sampler(spec: &WeightSpec, delta_n: f64, n: usize) -> Result<StationarySampler> {
    ensure_valid(spec)?;
    StationarySampler::build(
        n,
        |m| {
            let lags: Vec<f64> = (0..m).map(|i| i as f64 * delta_n).collect();
            autocovariances(spec, &lags, COV_TOL)
        },
        "simulate_gaussian_core",
    )
}

pub fn simulate_gaussian_core(spec: &WeightSpec, grid: &GridSpec, seed: u64) -> Result<PathSample> {
    grid.check_basic()?;
    let sampler = gaussian_core_sampler(spec, grid.delta_n, grid.n_points())?;
    let mut rng = rng_from_seed(seed);
    Ok(PathSample {
        values: sampler.sample(&mut rng),
        grid: *grid,
        seed,
        kind: PathKind::GaussianCore,
        sigma_values: None,
    })
}

/// Autocovariance of fractional Gaussian noise with unit step.
fn fgn_cov(h: f64, j: usize) -> f64 {
    let e = 2.0 * h;
    let j = j as f64;
    0.5 * ((j + 1.0).powf(e) - 2.0 * j.powf(e) + (j - 1.0).abs().powf(e))
}

/// Exact sampler for `n_increments` fGn increments at unit step.
pub fn fgn_sampler(h: f64, n_increments: usize) -> Result<StationarySampler> {
    if !(h > 0.0 && h < 1.0) {
        return Err(BssError::InvalidArgument(format!("Hurst index must lie in (0, 1), got {h}")));
    }
    StationarySampler::build(
        n_increments,
        |m| Ok((0..m).map(|j| fgn_cov(h, j)).collect()),
        "simulate_fbm",
    )
}

/// fBm at `0, step, …, n_increments·step`, anchored at 0.
pub fn simulate_fbm(h: f64, n_increments: usize, step: f64, seed: u64) -> Result<PathSample> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(BssError::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let sampler = fgn_sampler(h, n_increments)?;
    let mut rng = rng_from_seed(seed);
    Ok(fbm_from_increments(&sampler.sample(&mut rng), h, step, seed))
}

pub(crate) fn fbm_from_increments(inc: &[f64], h: f64, step: f64, seed: u64) -> PathSample {
    let scale = step.powf(h);
    let mut values = Vec::with_capacity(inc.len() + 1);
    let mut acc = 0.0;
    values.push(0.0);
    for z in inc {
        acc += scale * z;
        values.push(acc);
    }
    PathSample {
        values,
        grid: GridSpec::new(step, inc.len() as f64 * step, 1, 0.0),
        seed,
        kind: PathKind::Fbm,
        sigma_values: None,
    }
}

/// Joint law of `(ΔW, ∫_cell g(dh + u) dW_u for d ∈ lags)` over one inner cell.
struct SingularBlock {
    lags: Vec<usize>,
    /// `factor·ξ` with `ξ` standard normal has the joint law.
    factor: DMatrix<f64>,
}

impl SingularBlock {
    fn new(spec: &WeightSpec, h: f64, n_cells: usize) -> Result<Self> {
        let mut lags: Vec<usize> = Vec::new();
        for a in 0..spec.anchor_count() {
            let centre = (spec.anchor(a) / h).floor() as i64;
            for d in centre - 2..=centre + 2 {
                if d >= 0 && (d as usize) < n_cells {
                    lags.push(d as usize);
                }
            }
        }
        lags.sort_unstable();
        lags.dedup();
        let dim = lags.len() + 1;
        // φ_0 ≡ 1 stands for ΔW itself.
        let integral = |p: Option<usize>, q: Option<usize>| -> Result<f64> {
            let mut nodes: Vec<Node<(Option<Site>, Option<Site>)>> = Vec::new();
            let site = |d: Option<usize>, u: f64| d.map(|d| spec.site_for(d as f64 * h + u));
            let mut breaks = vec![0.0, h];
            let mut singular: Vec<(f64, usize, f64)> = Vec::new();
            for a in 0..spec.anchor_count() {
                for d in [p, q].into_iter().flatten() {
                    let u = spec.anchor(a) - d as f64 * h;
                    if u > 0.0 && u < h {
                        let e = spec.segments.get(a).map(|s| s.alpha).unwrap_or(0.0);
                        singular.push((u, a, e));
                    }
                }
            }
            for &(u, _, _) in &singular {
                breaks.push(u);
            }
            breaks.sort_by(|x, y| x.total_cmp(y));
            breaks.dedup();
            for &u in &breaks {
                let mut sp = (site(p, u), site(q, u));
                let mut exponent = None;
                for &(us, a, e) in &singular {
                    if us == u {
                        let exact = Site { anchor: a, base: 0.0 };
                        if p.is_some_and(|d| spec.anchor(a) - d as f64 * h == u) {
                            sp.0 = Some(exact);
                        }
                        if q.is_some_and(|d| spec.anchor(a) - d as f64 * h == u) {
                            sp.1 = Some(exact);
                        }
                        exponent = Some(exponent.unwrap_or(0.0) + e);
                    }
                }
                nodes.push(match exponent {
                    Some(e) if spec.is_singular() => Node::singular(u, sp, e),
                    _ => Node::regular(u, sp),
                });
            }
            let q = integrate_nodes(
                |(s1, s2), off| {
                    let f1 = s1.map(|s| spec.eval_site(s, off)).unwrap_or(1.0);
                    let f2 = s2.map(|s| spec.eval_site(s, off)).unwrap_or(1.0);
                    f1 * f2
                },
                &nodes,
                &QuadOptions::with_rel_tol(1e-10),
            )
            .map_err(|e| e.in_op("simulate_bss"))?;
            Ok(q.value)
        };
        let idx = |i: usize| if i == 0 { None } else { Some(lags[i - 1]) };
        let mut cov = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                let v = if i == 0 && j == 0 { h } else { integral(idx(i), idx(j))? };
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(cov);
        let top = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v));
        let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &v| m.min(v));
        if min < -1e-8 * top {
            return Err(BssError::NotPositiveDefinite {
                op: "simulate_bss",
                min_eigenvalue: min,
            });
        }
        let mut factor = eig.eigenvectors.clone();
        for (c, &l) in eig.eigenvalues.iter().enumerate() {
            let s = l.max(0.0).sqrt();
            for r in 0..dim {
                factor[(r, c)] *= s;
            }
        }
        Ok(Self { lags, factor })
    }
}

/// Linear convolution `out[i] = Σ_d w[d]·y[i + offset − d]` via FFT,
/// returning the full linear convolution of `w` and `y`.
fn fft_convolve(w: &[f64], y: &[f64]) -> Vec<f64> {
    let len = w.len() + y.len() - 1;
    let size = len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut a: Vec<Complex<f64>> = (0..size)
        .map(|i| Complex::new(w.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    let mut b: Vec<Complex<f64>> = (0..size)
        .map(|i| Complex::new(y.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, z) in a.iter_mut().zip(b.iter()) {
        *x *= z;
    }
    inv.process(&mut a);
    a.truncate(len);
    a.iter().map(|z| z.re / size as f64).collect()
}

/// Precomputed pieces of the Riemann scheme for one `(spec, grid)` pair.
pub struct RiemannScheme {
    grid: GridSpec,
    h: f64,
    memory_cells: usize,
    inner_cells: usize,
    weights: Vec<f64>,
    block: SingularBlock,
}

impl RiemannScheme {
    pub fn new(spec: &WeightSpec, grid: &GridSpec) -> Result<Self> {
        ensure_valid(spec)?;
        grid.validate_for(spec)?;
        let h = grid.delta_n / grid.refinement as f64;
        let memory_cells = (grid.truncation / h * (1.0 - 1e-12)).ceil() as usize;
        let inner_cells = (grid.n_points() - 1) * grid.refinement;
        if memory_cells + inner_cells > MAX_INNER_CELLS {
            return Err(BssError::ResourceGuard(format!(
                "Riemann scheme needs {} inner cells (limit {MAX_INNER_CELLS})",
                memory_cells + inner_cells
            )));
        }
        let block = SingularBlock::new(spec, h, memory_cells)?;
        let mut weights: Vec<f64> = (0..memory_cells)
            .map(|d| eval_g(spec, (d as f64 + 0.5) * h))
            .collect();
        for &d in &block.lags {
            weights[d] = 0.0;
        }
        Ok(Self {
            grid: *grid,
            h,
            memory_cells,
            inner_cells,
            weights,
            block,
        })
    }

    /// Run the scheme with σ given on the inner grid `s_m = m·h`, `m = −L..=N`
    /// (indexed from 0).
    fn run<R: Rng>(&self, sigma_inner: &[f64], mu: f64, rng: &mut R) -> Vec<f64> {
        let (l, n_in, kappa) = (self.memory_cells, self.inner_cells, self.grid.refinement);
        let total = l + n_in;
        let n_obs = self.grid.n_points();
        let dim = self.block.lags.len() + 1;
        let mut y = vec![0.0; total];
        let mut out = vec![mu; n_obs];
        let mut xi = DVector::zeros(dim);
        for (cell, yc) in y.iter_mut().enumerate() {
            for v in xi.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let draw = &self.block.factor * &xi;
            let sigma = sigma_inner[cell];
            *yc = sigma * draw[0];
            // cell index m = cell − L; it feeds observation i at lag d when
            // i·κ − d − 1 = m.
            for (bi, &d) in self.block.lags.iter().enumerate() {
                let t = cell + d + 1;
                if t >= l && (t - l) % kappa == 0 {
                    let i = (t - l) / kappa;
                    if i < n_obs {
                        out[i] += sigma * draw[bi + 1];
                    }
                }
            }
        }
        let conv = fft_convolve(&self.weights, &y);
        for (i, o) in out.iter_mut().enumerate() {
            // Σ_d w_d y[cell = L + iκ − d − 1] is conv[L + iκ − 1]
            let idx = l + i * kappa;
            if idx >= 1 {
                *o += conv[idx - 1];
            }
        }
        out
    }

    fn sigma_inner<R: Rng>(&self, sigma: &IntermittencySpec, rng: &mut R) -> Vec<f64> {
        let total = self.memory_cells + self.inner_cells + 1;
        let start = -(self.memory_cells as f64) * self.h;
        match sigma {
            IntermittencySpec::ExpOu { kappa, xi, y0 } => {
                let decay = (-kappa * self.h).exp();
                let sd = xi * ((1.0 - decay * decay) / (2.0 * kappa)).sqrt();
                let mut y = *y0;
                let mut out = Vec::with_capacity(total);
                for _ in 0..total {
                    out.push(y.exp());
                    let z: f64 = rng.sample(StandardNormal);
                    y = y * decay + sd * z;
                }
                out
            }
            s => (0..total)
                .map(|m| s.eval(start + m as f64 * self.h).unwrap_or(0.0))
                .collect(),
        }
    }

    pub fn simulate(&self, mu: f64, sigma: &IntermittencySpec, seed: u64) -> PathSample {
        let mut sigma_rng = rng_from_seed(derive_seed(seed, 1));
        let mut w_rng = rng_from_seed(derive_seed(seed, 0));
        let sig = self.sigma_inner(sigma, &mut sigma_rng);
        let values = self.run(&sig, mu, &mut w_rng);
        let sigma_values = (0..values.len())
            .map(|i| sig[self.memory_cells + i * self.grid.refinement])
            .collect();
        PathSample {
            values,
            grid: self.grid,
            seed,
            kind: PathKind::Bss,
            sigma_values: Some(sigma_values),
        }
    }
}

/// BSS path on the observation grid: exact when σ is constant, Riemann scheme otherwise.
pub fn simulate_bss(
    spec: &WeightSpec,
    mu: f64,
    sigma: &IntermittencySpec,
    grid: &GridSpec,
    seed: u64,
) -> Result<PathSample> {
    sigma.check()?;
    if !mu.is_finite() {
        return Err(BssError::InvalidArgument(format!("mu must be finite, got {mu}")));
    }
    ensure_valid(spec)?;
    grid.validate_for(spec)?;
    match sigma {
        IntermittencySpec::Constant { c } => {
            let core = simulate_gaussian_core(spec, grid, seed)?;
            let n = core.values.len();
            Ok(PathSample {
                values: core.values.iter().map(|g| mu + c * g).collect(),
                grid: *grid,
                seed,
                kind: PathKind::Bss,
                sigma_values: Some(vec![*c; n]),
            })
        }
        _ => Ok(RiemannScheme::new(spec, grid)?.simulate(mu, sigma, seed)),
    }
}
