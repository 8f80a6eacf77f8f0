//! Runs the built `fret` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

fn fret(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fret"))
        .args(args)
        .env_remove("FRET_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn scenario_list_prints_the_registry() {
    let o = fret(&["scenario", "list"]);
    assert!(o.status.success());
    let out = String::from_utf8(o.stdout).unwrap();
    for name in ["drift", "geometric", "two_state", "pareto_stable", "no_decay_A", "vanishing_coupling_B", "fat_flag_C", "unscaled_D"] {
        assert!(out.lines().any(|l| l.split_whitespace().next() == Some(name)), "{name} missing:\n{out}");
    }
}

#[test]
fn stationary_reads_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("p.json");
    std::fs::write(&json, "[[0.5, 0.5], [0.7, 0.3]]").unwrap();
    let csv = dir.path().join("p.csv");
    std::fs::write(&csv, "0.5,0.5\n0.7,0.3\n").unwrap();
    for path in [&json, &csv] {
        let o = fret(&["stationary", path.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        let pi: Vec<f64> = serde_json::from_value(v["pi"].clone()).unwrap();
        assert!(v["residual"].as_f64().unwrap() < 1e-12);
        // balance π_1 · 0.5 = π_2 · 0.7 gives (7/12, 5/12)
        assert!((pi[0] - 7.0 / 12.0).abs() < 1e-12 && (pi[1] - 5.0 / 12.0).abs() < 1e-12, "{pi:?}");
    }
}

#[test]
fn stationary_rejects_a_non_stochastic_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "[[0.5, 0.6], [0.7, 0.3]]").unwrap();
    let o = fret(&["stationary", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error:"));
}

#[test]
fn check_exit_status_follows_registered_expectations() {
    let o = fret(&["check", "unscaled_D", "--conditions", "D1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let reports: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(reports[0]["condition"], "D1");
    assert_eq!(reports[0]["verdict"], "fail");

    let o = fret(&["check", "drift", "--conditions", "A,B,C,D1,D2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn check_of_a_model_without_expectations_fails_on_a_failing_condition() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    // flag probability 0.3 for every ε: no decay
    std::fs::write(
        &path,
        r#"{"name": "flat", "seed": 3, "template": {"m": 1, "joint_probs": [[["0.7", "0.3"]]],
            "sojourn": {"0,0,0": {"kind": "exp", "mean": "1"}, "0,0,1": {"kind": "exp", "mean": "1"}}}}"#,
    )
    .unwrap();
    let o = fret(&["check", path.to_str().unwrap(), "--conditions", "A"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn unknown_scenario_lists_the_available_ones() {
    let o = fret(&["check", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("nope") && err.contains("two_state"), "{err}");
}

#[test]
fn malformed_config_reports_a_schema_message() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    std::fs::write(&path, r#"{"name": "x", "builtin": "drift", "seed": 1, "colour": 3}"#).unwrap();
    let o = fret(&["check", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));
}

#[test]
fn simulate_writes_reproducible_samples() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (path, threads) in [(&a, "1"), (&b, "3")] {
        let o = Command::new(env!("CARGO_BIN_EXE_fret"))
            .args(["simulate", "drift", "--eps", "0.01", "-n", "2000", "--seed", "5", "--out"])
            .arg(path)
            .env("FRET_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "replicate,nu,xi,last_sojourn,xi_t0.5,xi_t1,xi_t2");
    // ξ is exactly Exp(1) for the drift scenario
    let xs: Vec<f64> = lines.map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(xs.len(), 2000);
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    assert!((mean - 1.0).abs() < 4.0 / (xs.len() as f64).sqrt(), "mean {mean}");
}

#[test]
fn verify_lemma7_on_drift_improves_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let out2 = dir.path().join("r2.json");
    let plot = dir.path().join("r.csv");
    let base = ["verify", "lemma7", "drift", "--eps-grid", "1e-2,1e-3", "-n", "100000", "--seed", "42", "--out"];
    let o = fret(&[&base[..], &[out.to_str().unwrap(), "--csv", plot.to_str().unwrap()]].concat());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = read_json(&out);
    assert_eq!(report["theorem"], "lemma7");
    assert_eq!(report["scenario"], "drift");
    assert_eq!(report["trend"], "improving");
    assert!(!report["rows"].as_array().unwrap().is_empty());
    assert!(std::fs::read_to_string(&plot).unwrap().starts_with("theorem,scenario,eps"));

    let o = fret(&[&base[..], &[out2.to_str().unwrap()]].concat());
    assert!(o.status.success());
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&out2).unwrap());
}

#[test]
fn verify_refuses_failed_preconditions_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let args = ["verify", "lemma7", "no_decay_A", "--eps-grid", "1e-2", "-n", "200", "--seed", "1", "--out", out.to_str().unwrap()];
    let o = fret(&args);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("condition A"), "{}", stderr(&o));
    assert!(!out.exists());

    let o = fret(&[&args[..], &["--force"]].concat());
    assert_ne!(o.status.code(), Some(2), "{}", stderr(&o));
    assert_eq!(read_json(&out)["watermark"], "preconditions-violated");
}

#[test]
fn verify_rejects_unknown_theorem() {
    let o = fret(&["verify", "theorem9", "drift", "--out", "x.json"]);
    assert_eq!(o.status.code(), Some(2));
}
