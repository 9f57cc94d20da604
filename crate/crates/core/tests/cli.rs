//! End-to-end checks of the dpm binary surface.

use std::fs;
use std::process::{Command, Output};

fn dpm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpm"))
        .args(args)
        .output()
        .expect("failed to launch dpm")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn predict_cost_prints_the_closed_forms() {
    let out = dpm(&[
        "predict-cost",
        "--algorithm",
        "sequential",
        "--decomposition",
        "evd",
        "--components",
        "3",
        "--power-iters",
        "20",
        "--k",
        "40",
    ]);
    assert!(out.status.success());
    assert_eq!(stdout(&out), "2520\n");

    let out = dpm(&[
        "predict-cost",
        "--algorithm",
        "parallel",
        "--decomposition",
        "svd",
        "--components",
        "2",
        "--power-iters",
        "10",
        "--k1",
        "40",
        "--k2",
        "50",
    ]);
    assert!(out.status.success());
    assert_eq!(stdout(&out), "990\n");
}

#[test]
fn predict_cost_svd_requires_k2() {
    let out = dpm(&[
        "predict-cost",
        "--algorithm",
        "sequential",
        "--decomposition",
        "svd",
        "--components",
        "2",
        "--power-iters",
        "10",
        "--k1",
        "40",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_reports_a_summary_and_writes_trial_json() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    fs::write(
        &config,
        "signal.s_nodes = 8\nsignal.r_nodes = 8\nsignal.s_sources = 3\nsignal.snapshots = 40\n\
         power.power_iters = 5\npower.num_components = 2\ngossip.k1 = 15\ngossip.k2 = 15\n\
         run.trials = 3\n",
    )
    .unwrap();
    let json_path = dir.path().join("trials.json");

    let out = dpm(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        json_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("trials 3"), "summary missing trials: {text}");
    assert!(text.contains("mean_nmse "), "summary missing NMSE: {text}");

    let blob: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&json_path).unwrap()).unwrap();
    let trials = blob.as_array().unwrap();
    assert_eq!(trials.len(), 3);
    assert!(trials[0]["ledger"]["gossip_rounds"].is_u64());
    assert!(trials[0]["nmse"].as_f64().unwrap().is_finite());
}

#[test]
fn seed_and_trials_flags_override_the_config() {
    let out_a = dpm(&["run", "--seed", "5", "--trials", "2"]);
    let out_b = dpm(&["run", "--seed", "5", "--trials", "2"]);
    let out_c = dpm(&["run", "--seed", "6", "--trials", "2"]);
    assert!(out_a.status.success());
    assert_eq!(stdout(&out_a), stdout(&out_b));
    assert_ne!(stdout(&out_a), stdout(&out_c));
    assert!(stdout(&out_a).contains("trials 2"));
}

#[test]
fn sweep_emits_deterministic_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    fs::write(
        &config,
        "signal.s_nodes = 8\nsignal.s_sources = 3\nsignal.snapshots = 30\n\
         power.power_iters = 4\npower.num_components = 2\nrun.trials = 2\n",
    )
    .unwrap();

    let args = [
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--values",
        "5,10",
    ];
    let first = dpm(&args);
    assert!(first.status.success());
    let csv = stdout(&first);
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "axis_value,algorithm,mean_nmse,trials,mean_gossip_rounds"
    );
    assert_eq!(lines.count(), 4);
    assert_eq!(csv, stdout(&dpm(&args)));

    // --out writes the same bytes to a file instead.
    let csv_path = dir.path().join("sweep.csv");
    let mut with_out = args.to_vec();
    with_out.extend(["--out", csv_path.to_str().unwrap()]);
    let filed = dpm(&with_out);
    assert!(filed.status.success());
    assert!(stdout(&filed).is_empty());
    assert_eq!(fs::read_to_string(&csv_path).unwrap(), csv);
}

#[test]
fn config_errors_use_the_config_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    fs::write(&config, "signal.snapshot_count = 10\n").unwrap();
    let out = dpm(&["run", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn parameter_errors_use_the_parameter_exit_code() {
    let out = dpm(&["sweep", "--axis", "sideways"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validate_succeeds_and_lists_checks() {
    let out = dpm(&["validate"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.starts_with("ok   ")).count(), 5);
    assert!(!text.contains("FAIL"));
}
