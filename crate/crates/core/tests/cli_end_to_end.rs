use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn horizon_est(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_horizon-est")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = horizon_est(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn positions(v: &Value) -> Vec<[f64; 3]> {
    v["per_epoch"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| {
            let p = e["est_ecef"].as_array().unwrap();
            [p[0].as_f64().unwrap(), p[1].as_f64().unwrap(), p[2].as_f64().unwrap()]
        })
        .collect()
}

fn synthetic<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec!["--synthetic", "--seed", "7", "--n-epochs", "120", "--out", out];
    args.extend_from_slice(extra);
    args
}

#[test]
fn noiseless_ekf_recovers_truth() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut args = vec!["run", "--estimator", "ekf"];
    args.extend(synthetic(out, &["--sigma-pr", "0", "--sigma-prr", "0"]));
    ok(&args);
    let r = report(dir.path());
    assert!(r["summary"]["horizontal_mean_m"].as_f64().unwrap() < 1e-3);
    assert!(r["summary"]["vertical_rmse_m"].as_f64().unwrap() < 1e-3);
    assert!(dir.path().join("report.csv").exists());
    assert!(dir.path().join("config.json").exists());
}

#[test]
fn zero_horizon_matches_ekf_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("ekf"), dir.path().join("mhe"));
    let mut args = vec!["run", "--estimator", "ekf"];
    args.extend(synthetic(a.to_str().unwrap(), &[]));
    ok(&args);
    let mut args = vec!["run", "--estimator", "mhe", "--horizon", "0"];
    args.extend(synthetic(b.to_str().unwrap(), &[]));
    ok(&args);
    let (pa, pb) = (positions(&report(&a)), positions(&report(&b)));
    assert_eq!(pa.len(), pb.len());
    for (x, y) in pa.iter().zip(&pb) {
        let d = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt();
        assert!(d < 1e-8, "{d}");
    }
}

#[test]
fn factor_graph_and_wls_runs_produce_reports() {
    let dir = tempfile::tempdir().unwrap();
    for est in ["fgo", "wls"] {
        let out = dir.path().join(est);
        let mut args = vec!["run", "--estimator", est, "--horizon", "3"];
        args.extend(synthetic(out.to_str().unwrap(), &[]));
        let output = ok(&args);
        let r = report(&out);
        assert_eq!(r["summary"]["estimator_name"], est);
        assert!(r["summary"]["horizontal_mean_m"].as_f64().unwrap().is_finite());
        if est == "wls" {
            assert!(String::from_utf8_lossy(&output.stderr).contains("ignored"));
        }
    }
}

fn sweep_rows(dir: &Path) -> Vec<(usize, f64)> {
    let text = fs::read_to_string(dir.join("sweep.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("horizon,horizontal_mean_m,vertical_rmse_m,error"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap())
        })
        .collect()
}

#[test]
fn mhe_sweep_is_flat_and_fgo_sweep_is_not() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("mhe"), dir.path().join("fgo"));
    let mut args = vec!["sweep", "--estimator", "mhe", "--horizons", "0,1,5"];
    args.extend(synthetic(a.to_str().unwrap(), &[]));
    ok(&args);
    let rows = sweep_rows(&a);
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0, 1, 5]);
    for r in &rows {
        assert!((r.1 - rows[0].1).abs() < 1e-6);
    }
    assert!(a.join("horizon_5").join("report.json").exists());

    let mut args = vec!["sweep", "--estimator", "fgo", "--horizons", "1,3,6"];
    args.extend(synthetic(b.to_str().unwrap(), &[]));
    ok(&args);
    let fgo = sweep_rows(&b);
    assert_eq!(fgo.len(), 3);
    assert!(fgo.iter().any(|r| (r.1 - fgo[0].1).abs() > 1e-6));
}

#[test]
fn empty_horizon_list_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep", "--estimator", "mhe", "--horizons", ""];
    args.extend(synthetic(dir.path().to_str().unwrap(), &[]));
    assert_eq!(horizon_est(&args).status.code(), Some(2));
    assert_eq!(horizon_est(&["run", "--estimator", "kalman", "--synthetic", "--out", "x"]).status.code(), Some(2));
    assert_eq!(horizon_est(&["run", "--synthetic"]).status.code(), Some(2));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let mut args = vec!["run", "--estimator", "mhe", "--horizon", "4"];
        args.extend(synthetic(out.to_str().unwrap(), &[]));
        ok(&args);
    }
    for name in ["report.json", "report.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
    }
}

#[test]
fn simulated_files_feed_a_file_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["simulate", "--seed", "3", "--n-epochs", "60", "--out", data.to_str().unwrap()]);
    let out = dir.path().join("run");
    ok(&[
        "run",
        "--estimator",
        "mhe",
        "--epochs",
        data.join("epochs.csv").to_str().unwrap(),
        "--truth",
        data.join("truth.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let r = report(&out);
    assert_eq!(r["summary"]["n_epochs"], 60);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("out");
    fs::write(
        &cfg,
        format!("# settings\nestimator = ekf\nsynthetic = true\nn_epochs = 40\nseed = 9\nout = {}\n", out.display()),
    )
    .unwrap();
    ok(&["run", "--config", cfg.to_str().unwrap(), "--estimator", "mhe", "--horizon", "2"]);
    let r = report(&out);
    assert_eq!(r["summary"]["estimator_name"], "mhe");
    assert_eq!(r["summary"]["horizon"], 2);
    assert_eq!(r["summary"]["n_epochs"], 40);
}

#[test]
fn verify_suite_reports_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["verify", "lemma2", "--trials", "5", "--out", dir.path().to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("PASS lemma2"));
    assert!(dir.path().join("verify.json").exists());
    assert_eq!(horizon_est(&["verify", "nonsense"]).status.code(), Some(2));
}
