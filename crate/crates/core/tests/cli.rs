use std::fs;
use std::path::Path;

use bss_core::cli::{dispatch_with, read_path_csv};

const SINGLE: &str = r#"
kind = "singular_kernel"
tail_rate = 1.0

[[segments]]
theta = 0.0
alpha = -0.16666666666666666
f_coeffs = [1.0]
half_width = 0.5
"#;

fn bss(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("bss").chain(args.iter().copied());
    let code = dispatch_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn limits_single_point_mass() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "single.toml", SINGLE);
    let (code, out, _) = bss(&["limits", "--spec", &spec, "--k", "2"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["pi_k"], serde_json::json!({"0": 1.0}));
}

#[test]
fn limits_lambda_json_shape() {
    let (code, out, _) = bss(&["limits", "--lambda", "--hurst", "0.5", "--k", "1"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["lambda"][0][0], 2.0);
    assert!(v["truncation_j"].is_i64());
    assert!(v["tail_bound"].is_f64());
}

#[test]
fn bad_exponent_exits_one_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "bad.toml", &SINGLE.replace("-0.16666666666666666", "0.7"));
    let out = dir.path().join("x.csv");
    let (code, _, err) = bss(&[
        "simulate", "--spec", &spec, "--delta-n", "0.01", "--out", out.to_str().unwrap(), "--verbose", "json",
    ]);
    assert_eq!(code, 1);
    let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["diagnostics"][0]["diagnostic"], "exponent_range");
    assert!(!out.exists());
}

#[test]
fn numerical_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "single.toml", SINGLE);
    let (code, _, err) = bss(&["limits", "--spec", &spec, "--rel-tol", "1e-300"]);
    assert_eq!(code, 2);
    assert!(err.contains("h_norm_sq"), "{err}");
}

#[test]
fn unknown_flags_and_ranges_rejected() {
    assert_eq!(bss(&["limits", "--bogus", "1"]).0, 1);
    assert_eq!(bss(&["simulate", "--delta-n", "-1", "--out", "x.csv", "--spec", "none.toml"]).0, 1);
    assert_eq!(bss(&["limits", "--lambda", "--hurst", "0.5", "--k", "0"]).0, 1);
    let (code, out, _) = bss(&["--version"]);
    assert_eq!(code, 0);
    assert!(out.starts_with("bss 0.1.0 ("));
}

#[test]
fn simulate_estimate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "single.toml", SINGLE);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let (code, _, err) = bss(&[
            "simulate", "--spec", &spec, "--delta-n", "0.001", "--horizon", "1", "--seed", "11", "--out",
            p.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "{err}");
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let text = fs::read_to_string(&a).unwrap();
    assert!(text.starts_with("t,X,sigma\n"));
    assert_eq!(text.lines().count(), 1002);
    let parsed = read_path_csv(&a, 0.001).unwrap();
    let col: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(parsed.values, col);

    let (code, out, err) = bss(&[
        "estimate", "--in", a.to_str().unwrap(), "--k", "2", "--delta-n", "0.001", "--t", "1", "--null-alpha",
        "-0.1666666666666667", "--spec", &spec,
    ]);
    assert_eq!(code, 0, "{err}");
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let alpha = v["alpha_hat"].as_f64().unwrap();
    let ci = [v["ci_95"][0].as_f64().unwrap(), v["ci_95"][1].as_f64().unwrap()];
    assert!(ci[0] <= alpha && alpha <= ci[1]);
    assert!(v["t_stat"].is_f64());
    assert_eq!(v["horizon_unchecked"], false);
}

#[test]
fn simulate_trig_sigma_column() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "single.toml", SINGLE);
    let out = dir.path().join("p.csv");
    let (code, _, err) = bss(&[
        "simulate", "--spec", &spec, "--delta-n", "0.01", "--kappa", "4", "--sigma", "trig:1,0.5,0", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let text = fs::read_to_string(&out).unwrap();
    let first = text.lines().nth(1).unwrap();
    assert_eq!(first.split(',').nth(2), Some("1.5"));
}

#[test]
fn experiment_outputs_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "single.toml", SINGLE);
    let cfg = write(
        dir.path(),
        "exp.toml",
        "kind = \"lln\"\nspec_path = \"single.toml\"\nk = 2\ndelta_ladder = [0.0078125, 0.00390625]\nreplications = 16\nmaster_seed = 3\n",
    );
    let mut reports = Vec::new();
    for name in ["r1", "r2"] {
        let out = dir.path().join(name);
        let (code, _, err) = bss(&["experiment", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0, "{err}");
        let csv = fs::read_to_string(out.join("replications.csv")).unwrap();
        assert!(csv.starts_with("rep,delta_n,v,statistic_value,seed\n"));
        assert_eq!(csv.lines().count(), 1 + 16 * 2 * 2);
        reports.push(fs::read(out.join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);

    let other = dir.path().join("r3");
    let (code, _, _) = bss(&["experiment", "--config", &cfg, "--out", other.to_str().unwrap(), "--seed", "4"]);
    assert_eq!(code, 0);
    assert_ne!(fs::read(other.join("report.json")).unwrap(), reports[0]);
}

#[test]
fn experiment_rejects_zero_replications() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "single.toml", SINGLE);
    let cfg = write(
        dir.path(),
        "exp.toml",
        "kind = \"coverage\"\nspec_path = \"single.toml\"\nk = 2\ndelta_ladder = [0.001]\nreplications = 0\nmaster_seed = 3\n",
    );
    let out = dir.path().join("o");
    assert_eq!(bss(&["experiment", "--config", &cfg, "--out", out.to_str().unwrap()]).0, 1);
}
