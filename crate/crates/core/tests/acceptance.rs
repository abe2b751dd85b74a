//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::time::{Duration, Instant};

use bss_core::experiments::{run, ExperimentConfig, ExperimentKind, ExperimentOutput};
use bss_core::fbm_limits::{lambda_matrix, rho};
use bss_core::limit_quantities::{h_norm_sq, pi_k, pi_n_measure, tau_sq};
use bss_core::simulation::IntermittencySpec;
use bss_core::weight_model::{SingularitySegment, WeightSpec};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------- independent oracle for ‖h‖² ----------

/// Gauss–Legendre nodes and weights on [−1, 1] by Newton iteration.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for m in 2..=n {
                let p2 = ((2 * m - 1) as f64 * x * p1 - (m - 1) as f64 * p0) / m as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0, x);
        for m in 2..=n {
            let p2 = ((2 * m - 1) as f64 * x * p1 - (m - 1) as f64 * p0) / m as f64;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

fn binom(k: usize, m: usize) -> f64 {
    (0..m).fold(1.0, |acc, i| acc * (k - i) as f64 / (i + 1) as f64)
}

fn gen_binom(a: f64, m: usize) -> f64 {
    (0..m).fold(1.0, |acc, i| acc * (a - i as f64) / (i + 1) as f64)
}

/// `∫ (Σ_m (−1)^m C(k,m) (x − m)_±^α)² dx` on a graded mesh with an
/// expansion tail beyond `|x| = big`.
fn brute_h_norm(alpha: f64, k: usize, one_sided: bool) -> f64 {
    let gl = gauss_legendre(24);
    let c: Vec<f64> = (0..=k)
        .map(|m| if m % 2 == 0 { binom(k, m) } else { -binom(k, m) })
        .collect();
    let pw = |d: f64| {
        if one_sided {
            if d > 0.0 {
                d.powf(alpha)
            } else {
                0.0
            }
        } else if d == 0.0 {
            0.0
        } else {
            d.abs().powf(alpha)
        }
    };
    // x = a + off with the integer anchor a kept separate, so offsets far
    // below machine precision of |a| stay resolved
    let f = |a: f64, off: f64| {
        let s: f64 = c
            .iter()
            .enumerate()
            .map(|(m, cm)| cm * pw((a - m as f64) + off))
            .sum();
        s * s
    };
    let panel = |a: f64, lo: f64, hi: f64| -> f64 {
        let (h, m) = (0.5 * (hi - lo), 0.5 * (hi + lo));
        gl.iter().map(|(x, w)| w * f(a, m + h * x)).sum::<f64>() * h
    };
    // each unit cell is split in half, both halves graded toward the integers
    let graded = |a: f64, toward_left: bool| -> f64 {
        let mut s = 0.0;
        let mut outer = 0.5;
        for _ in 0..200 {
            let inner = outer * 0.25;
            s += if toward_left {
                panel(a, inner, outer)
            } else {
                panel(a, -outer, -inner)
            };
            outer = inner;
        }
        s
    };
    let lo = if one_sided { 0 } else { -1 };
    let mut total = 0.0;
    for cell in lo..=k as i64 {
        let a = cell as f64;
        total += graded(a, true) + graded(a + 1.0, false);
    }
    // geometric panels from the cells out to `big`
    let big = 1.0e4;
    let far = |start: f64, sign: f64| -> f64 {
        let mut s = 0.0;
        let mut a = start;
        while a < big {
            let b = (a * 1.05).min(big);
            s += panel(0.0, sign * a, sign * b).abs();
            a = b;
        }
        s
    };
    total += far(k as f64 + 1.0, 1.0);
    if !one_sided {
        total += far(1.0, -1.0);
    }
    // tails: |x|^α Σ_m a_m |x|^{−m}, a_m = C(α,m)(∓1)^m Σ_j c_j j^m
    let tail = |sign: f64| -> f64 {
        let terms = 6;
        let a: Vec<f64> = (0..k + terms)
            .map(|m| {
                let mu: f64 = c
                    .iter()
                    .enumerate()
                    .map(|(j, cj)| cj * (j as f64).powi(m as i32))
                    .sum();
                gen_binom(alpha, m) * sign.powi(m as i32) * mu
            })
            .collect();
        let mut s = 0.0;
        for p in k..k + terms {
            for q in k..k + terms {
                let e = 2.0 * alpha - (p + q) as f64 + 1.0;
                s += a[p] * a[q] * big.powf(e) / -e;
            }
        }
        s
    };
    total += tail(-1.0);
    if !one_sided {
        total += tail(1.0);
    }
    total
}

/// Frozen closed-form values `(α, k, one-sided, two-sided)`.
const FROZEN: [(f64, usize, f64, f64); 12] = [
    (-1.0 / 6.0, 1, 1.62977689603, 0.436697403134),
    (-1.0 / 6.0, 2, 3.93199802489, 1.05357569541),
    (-1.0 / 6.0, 3, 12.3140686417, 3.29954474808),
    (0.2, 1, 0.838892971872, 0.320428602332),
    (0.2, 2, 1.14172006213, 0.436098258098),
    (0.2, 3, 3.20578066212, 1.22449925245),
    (0.4, 1, 1.51957453621, 2.1000003606),
    (0.4, 2, 0.786832270967, 1.08737545503),
    (0.4, 3, 2.02325352759, 2.79606760727),
    (-0.4, 1, 7.81621804616, 10.8017476763),
    (-0.4, 2, 22.2863953727, 30.7990409184),
    (-0.4, 3, 73.1093144717, 101.034587706),
];

fn pair_spec(a0: f64, a1: f64) -> WeightSpec {
    WeightSpec::singular(
        vec![
            SingularitySegment::new(0.0, a0, vec![1.0], 0.5),
            SingularitySegment::new(2.0, a1, vec![1.0], 0.5),
        ],
        1.0,
    )
}

fn criterion_1() -> Outcome {
    let mut worst_oracle: f64 = 0.0;
    let mut worst_frozen: f64 = 0.0;
    for &(alpha, k, one, two) in &FROZEN {
        let spec = pair_spec(alpha, alpha);
        for (j, frozen) in [(0usize, one), (1usize, two)] {
            let main = match h_norm_sq(&spec, j, k, 1e-10) {
                Ok(v) => v,
                Err(e) => return outcome(false, format!("h_norm_sq({alpha}, {k}, {j}) failed: {e}")),
            };
            let oracle = brute_h_norm(alpha, k, j == 0);
            worst_oracle = worst_oracle.max(((main - oracle) / oracle).abs());
            worst_frozen = worst_frozen.max(((main - frozen) / frozen).abs());
        }
    }
    outcome(
        worst_oracle < 1e-6 && worst_frozen < 1e-6,
        format!("max rel. error vs graded-mesh oracle {worst_oracle:.2e}, vs closed form {worst_frozen:.2e}"),
    )
}

fn criterion_2() -> Outcome {
    let spec = WeightSpec::unit_indicator();
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    for d in [1e-2, 1e-3] {
        let tau = match tau_sq(&spec, 1, 1, d, 1e-12) {
            Ok(t) => t.tau_sq_exact,
            Err(e) => return outcome(false, format!("tau_sq failed: {e}")),
        };
        let mass = match pi_n_measure(&spec, 1, 1, d, [-d, 0.0]) {
            Ok(m) => m,
            Err(e) => return outcome(false, format!("pi_n_measure failed: {e}")),
        };
        worst = worst.max(((tau - 2.0 * d) / (2.0 * d)).abs());
        worst = worst.max(((mass - 0.5) / 0.5).abs());
        detail += &format!("Δ={d}: τ²/2Δ={:.12}, π_n={mass:.12}; ", tau / (2.0 * d));
    }
    outcome(worst < 1e-10, detail)
}

fn criterion_3() -> Outcome {
    let spec = pair_spec(-1.0 / 6.0, -1.0 / 6.0);
    let d = 2f64.powi(-13);
    let mut detail = String::new();
    let mut pass = true;
    for k in [1usize, 2] {
        match tau_sq(&spec, k, 1, d, 1e-10) {
            Ok(t) => {
                let r = t.tau_sq_exact / t.tau_sq_asymptotic;
                pass &= (0.99..=1.01).contains(&r);
                detail += &format!("k={k}: ratio {r:.6}; ");
            }
            Err(e) => return outcome(false, format!("tau_sq failed: {e}")),
        }
    }
    outcome(pass, detail)
}

fn criterion_4() -> Outcome {
    let mut worst: f64 = 0.0;
    for hi in 1..=9 {
        let h = hi as f64 / 10.0;
        let e = 2.0 * h;
        for j in 1..=100i64 {
            let jf = j as f64;
            let closed = 0.5 * ((jf + 1.0).powf(e) - 2.0 * jf.powf(e) + (jf - 1.0).powf(e));
            let r = rho(h, 1, 1, 1, j).unwrap();
            worst = worst.max((r - closed).abs());
        }
    }
    let l = lambda_matrix(0.5, 1, 1e-10).unwrap().lambda11();
    outcome(
        worst < 1e-12 && l == 2.0,
        format!("max |ρ − closed form| = {worst:.2e}; λ11(½) = {l}"),
    )
}

fn base_config(kind: ExperimentKind, spec: WeightSpec, replications: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        kind,
        spec: Some(spec),
        spec_path: None,
        sigma: IntermittencySpec::Constant { c: 1.0 },
        mu: 0.0,
        k: 2,
        delta_ladder: vec![2f64.powi(-12)],
        horizon: 1.0,
        replications,
        master_seed: seed,
        refinement: 8,
        truncation: None,
        use_asymptotic_tau: false,
        hurst: None,
        output: None,
    }
}

fn lln_config() -> ExperimentConfig {
    base_config(ExperimentKind::Lln, WeightSpec::single(-1.0 / 6.0), 200, 20_240_501)
}

fn clt_config() -> ExperimentConfig {
    base_config(ExperimentKind::Clt, WeightSpec::single(-1.0 / 6.0), 500, 20_240_502)
}

fn coverage_config() -> ExperimentConfig {
    base_config(ExperimentKind::Coverage, WeightSpec::single(-1.0 / 6.0), 500, 20_240_503)
}

fn multi_config() -> ExperimentConfig {
    let mut c = base_config(ExperimentKind::Lln, pair_spec(-1.0 / 6.0, -1.0 / 6.0), 200, 20_240_504);
    c.sigma = IntermittencySpec::Deterministic {
        c0: 1.0,
        cos: vec![0.3],
        sin: vec![0.2],
        omega: 2.0,
    };
    c.delta_ladder = vec![2f64.powi(-10)];
    c.refinement = 16;
    c
}

fn robust_config() -> ExperimentConfig {
    base_config(ExperimentKind::Lln, pair_spec(-1.0 / 6.0, 0.3), 200, 20_240_505)
}

fn report_json(out: &ExperimentOutput) -> String {
    serde_json::to_string_pretty(&out.report).unwrap()
}

fn criterion_5(out: &ExperimentOutput) -> Outcome {
    let r = out.report.row("scaled_qv", 2f64.powi(-12), 1).unwrap();
    outcome(
        (r.mean - 1.0).abs() < 3.0 * r.se && r.se < 0.02,
        format!("mean {:.5}, SE {:.5}, |bias|/SE {:.2}", r.mean, r.se, (r.mean - 1.0).abs() / r.se),
    )
}

fn criterion_6(out: &ExperimentOutput) -> Outcome {
    let ks = &out.report.ks;
    let cross = out.report.covariance.iter().find(|c| c.entry == [1, 2]);
    let (Some(cross), 2) = (cross, ks.len()) else {
        return outcome(false, "missing KS or covariance rows".into());
    };
    let pass = ks.iter().all(|r| r.passed_1pct) && cross.within_3se;
    outcome(
        pass,
        format!(
            "KS p-values v=1: {:.3}, v=2: {:.3}; cross-cov {:.4} vs {:.4} (SE {:.4})",
            ks[0].p_value, ks[1].p_value, cross.empirical, cross.theory, cross.se
        ),
    )
}

fn criterion_7(out: &ExperimentOutput) -> Outcome {
    let d = 2f64.powi(-12);
    let qq = out.report.row("scaled_qq", d, 1).unwrap();
    let cov = &out.report.coverage[0];
    let qq_ok = (qq.mean - 3.0).abs() < 4.0 * qq.se;
    let cov_ok = (0.93..=0.97).contains(&cov.coverage);
    outcome(
        qq_ok && cov_ok,
        format!(
            "Δ·QQ/τ⁴ mean {:.4} (SE {:.4}); coverage {:.3} ± {:.3}; feasible KS p {:.3}",
            qq.mean,
            qq.se,
            cov.coverage,
            cov.binomial_se,
            out.report.ks.first().map(|k| k.p_value).unwrap_or(f64::NAN)
        ),
    )
}

fn criterion_8(out: &ExperimentOutput) -> Outcome {
    let r = out.report.row("scaled_qv", 2f64.powi(-10), 1).unwrap();
    let target = r.target.unwrap();
    outcome(
        (r.mean - target).abs() < 3.0 * r.se,
        format!("mean {:.5} vs two-atom limit {:.5}, SE {:.5}", r.mean, target, r.se),
    )
}

fn criterion_9(robust: &ExperimentOutput, single: &ExperimentOutput) -> Outcome {
    let pi = pi_k(&pair_spec(-1.0 / 6.0, 0.3), 2).unwrap();
    let atom_ok = pi.support == vec![0.0] && pi.weights == vec![1.0];
    let d = 2f64.powi(-12);
    let a = robust.report.row("scaled_qv", d, 1).unwrap();
    let b = single.report.row("scaled_qv", d, 1).unwrap();
    let se = (a.se * a.se + b.se * b.se).sqrt();
    outcome(
        atom_ok && (a.mean - b.mean).abs() < 3.0 * se,
        format!(
            "π_k = {:?} on {:?}; means {:.5} vs {:.5} (combined SE {:.5})",
            pi.weights, pi.support, a.mean, b.mean, se
        ),
    )
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let s = Instant::now();
    let v = f();
    (v, s.elapsed())
}

fn report(n: usize, name: &str, o: &Outcome, t: Duration, budget: Duration, failures: &mut usize) {
    let pass = o.pass && t <= budget;
    if !pass {
        *failures += 1;
    }
    println!(
        "criterion {n:>2} [{}] {name}: {} ({:.1}s, budget {}s)",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        t.as_secs_f64(),
        budget.as_secs()
    );
}

fn main() {
    let mut failures = 0;
    let s = Duration::from_secs;

    let (o, t) = timed(criterion_1);
    report(1, "h-norm oracle equivalence", &o, t, s(10), &mut failures);
    let (o, t) = timed(criterion_2);
    report(2, "indicator kernel exact values", &o, t, s(1), &mut failures);
    let (o, t) = timed(criterion_3);
    report(3, "exact vs asymptotic τ²", &o, t, s(30), &mut failures);
    let (o, t) = timed(criterion_4);
    report(4, "fBm correlation closed form", &o, t, s(1), &mut failures);

    let configs = [lln_config(), clt_config(), coverage_config(), multi_config(), robust_config()];
    let mut outputs = Vec::new();
    let mut times = Vec::new();
    for cfg in &configs {
        let (out, t) = timed(|| run(cfg));
        match out {
            Ok(o) => outputs.push(o),
            Err(e) => {
                println!("experiment {:?} failed: {e}", cfg.kind);
                std::process::exit(1);
            }
        }
        times.push(t);
    }
    report(5, "LLN, single singularity", &criterion_5(&outputs[0]), times[0], s(120), &mut failures);
    report(6, "CLT, v = 1 and v = 2", &criterion_6(&outputs[1]), times[1], s(300), &mut failures);
    report(7, "quarticity and CI coverage", &criterion_7(&outputs[2]), times[2], s(480), &mut failures);
    report(8, "LLN, two active singularities", &criterion_8(&outputs[3]), times[3], s(180), &mut failures);
    report(
        9,
        "robustness gap drops inactive singularity",
        &criterion_9(&outputs[4], &outputs[0]),
        times[4],
        s(180),
        &mut failures,
    );

    let (o, t) = timed(|| {
        let mut same = 0;
        for (cfg, first) in configs.iter().zip(&outputs) {
            if run(cfg).map(|o| report_json(&o) == report_json(first)).unwrap_or(false) {
                same += 1;
            }
        }
        outcome(same == configs.len(), format!("{same}/{} reports byte-identical on rerun", configs.len()))
    });
    let budget: Duration = times.iter().sum::<Duration>() * 2 + s(30);
    report(10, "determinism", &o, t, budget, &mut failures);

    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
