use bss_core::fbm_limits::lambda_matrix;
use bss_core::hf_statistics::estimate_alpha;
use bss_core::limit_quantities::pi_k;
use bss_core::simulation::{simulate_bss, GridSpec, IntermittencySpec};
use bss_core::weight_model::{eval_g, summarize_smoothness, WeightSpec};
use serde_json::json;
use wasm_bindgen::prelude::*;

const MAX_DEMO_POINTS: usize = 1 << 16;

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

/// Kernel curve on `[0, support_end + 2]` together with `π_k`.
pub fn kernel_json(spec_toml: &str, k: usize, points: usize) -> Result<String, String> {
    let spec = WeightSpec::from_toml_str(spec_toml).map_err(|e| e.to_string())?;
    let pi = pi_k(&spec, k).map_err(|e| e.to_string())?;
    let summary = summarize_smoothness(&spec).map_err(|e| e.to_string())?;
    let points = points.clamp(2, 4096);
    let end = spec.support_end() + 2.0;
    let (xs, gs): (Vec<f64>, Vec<f64>) = (0..points)
        .map(|i| {
            let x = end * i as f64 / (points - 1) as f64;
            let g = eval_g(&spec, x);
            (x, if g.is_finite() { g } else { f64::NAN })
        })
        .unzip();
    Ok(json!({
        "x": xs,
        "g": gs.iter().map(|g| if g.is_nan() { None } else { Some(*g) }).collect::<Vec<_>>(),
        "alpha_min": summary.alpha_min,
        "active_set": summary.active_set,
        "support": pi.support,
        "weights": pi.weights,
    })
    .to_string())
}

/// Simulates one path and runs the feasible estimator with `t = horizon`.
pub fn simulate_json(
    spec_toml: &str,
    sigma: &str,
    delta_n: f64,
    horizon: f64,
    k: usize,
    seed: u64,
) -> Result<String, String> {
    let spec = WeightSpec::from_toml_str(spec_toml).map_err(|e| e.to_string())?;
    let sigma = IntermittencySpec::parse(sigma).map_err(|e| e.to_string())?;
    let grid = GridSpec::new(delta_n, horizon, 4, spec.support_end() + 8.0 / spec.tail_rate);
    if grid.n_points() > MAX_DEMO_POINTS {
        return Err(format!("the demo is limited to {MAX_DEMO_POINTS} points"));
    }
    let path = simulate_bss(&spec, 0.0, &sigma, &grid, seed).map_err(|e| e.to_string())?;
    let est = estimate_alpha(&path, k, horizon, None, None).map_err(|e| e.to_string())?;
    Ok(json!({
        "t": path.times(),
        "x": path.values,
        "sigma": path.sigma_values,
        "alpha_hat": est.alpha_hat,
        "ci_95": est.ci_95,
        "clamped": est.clamped,
    })
    .to_string())
}

/// `λ11`, `λ12`, `λ22` over a grid of Hurst indices in `(0, 1)` (k ≥ 2) or `(0, 3/4)` (k = 1).
pub fn lambda_json(k: usize, points: usize) -> Result<String, String> {
    let points = points.clamp(2, 200);
    let top = if k == 1 { 0.74 } else { 0.99 };
    let mut hs = Vec::with_capacity(points);
    let mut l = [Vec::new(), Vec::new(), Vec::new()];
    for i in 0..points {
        let h = 0.01 + (top - 0.01) * i as f64 / (points - 1) as f64;
        let m = lambda_matrix(h, k, 1e-8).map_err(|e| e.to_string())?;
        hs.push(h);
        l[0].push(m.lambda11());
        l[1].push(m.lambda12());
        l[2].push(m.lambda22());
    }
    Ok(json!({"H": hs, "lambda11": l[0], "lambda12": l[1], "lambda22": l[2]}).to_string())
}

#[wasm_bindgen]
pub fn kernel(spec_toml: &str, k: usize, points: usize) -> Result<String, JsValue> {
    js(kernel_json(spec_toml, k, points))
}

#[wasm_bindgen]
pub fn simulate(spec_toml: &str, sigma: &str, delta_n: f64, horizon: f64, k: usize, seed: u32) -> Result<String, JsValue> {
    js(simulate_json(spec_toml, sigma, delta_n, horizon, k, seed as u64))
}

#[wasm_bindgen]
pub fn lambda_curve(k: usize, points: usize) -> Result<String, JsValue> {
    js(lambda_json(k, points))
}
