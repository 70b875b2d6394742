//! End-to-end command-line checks: documented exit codes, the artifact set
//! each subcommand writes, and format round-trips on a deliberately small
//! run.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(dir: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bnp-dcgx"));
    c.current_dir(dir).env_remove("BNP_DCGX_THREADS");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin(dir)
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn assert_exit(out: &Output, code: i32, what: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{what}: expected exit {code}, got {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn validation_and_io_failures_use_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    // Config present but the referenced CSVs are not: an I/O failure.
    fs::write(d.join("config.toml"), "scenario = 2\n").unwrap();
    let out = run(d, &["fit", "--config", "config.toml", "--quiet"]);
    assert_exit(&out, 3, "fit without input data");

    // A misspelled key is rejected at load, before any file access.
    fs::write(d.join("bad_key.toml"), "scenario = 2\niterations = 5\n").unwrap();
    let out = run(d, &["fit", "--config", "bad_key.toml", "--quiet"]);
    assert_exit(&out, 2, "unknown config key");

    // Out-of-range values are validation failures.
    fs::write(d.join("bad_scenario.toml"), "scenario = 3\n").unwrap();
    let out = run(d, &["simulate", "--config", "bad_scenario.toml"]);
    assert_exit(&out, 2, "scenario out of range");

    fs::write(d.join("bad_threshold.toml"), "threshold = 1.5\n").unwrap();
    let out = run(d, &["export-graph", "--config", "bad_threshold.toml"]);
    assert_exit(&out, 2, "threshold out of range");
}

const FLOW_CONFIG: &str = "scenario = 2\n\
n_units = 20\n\
threshold = 0.5\n\
\n\
[hyperparams]\n\
seed = 11\n\
n_iter = 12\n\
n_burn = 4\n\
temperatures = [1.0]\n";

#[test]
fn small_run_writes_every_documented_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("config.toml"), FLOW_CONFIG).unwrap();

    let out = run(d, &["simulate", "--config", "config.toml"]);
    assert_exit(&out, 0, "simulate");
    for f in ["expr.csv", "coords.csv", "truth.json"] {
        assert!(d.join(f).exists(), "simulate should write {f}");
    }

    let out = run(d, &["fit", "--config", "config.toml", "--quiet"]);
    assert_exit(&out, 0, "fit");
    let trace = fs::read_to_string(d.join("trace.jsonl")).unwrap();
    // One JSON line per retained iteration.
    assert_eq!(trace.lines().count(), 12 - 4);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["retained_samples"], 8);
    assert_eq!(meta["config"]["scenario"], 2);
    // A single replica has no swap pairs.
    assert_eq!(meta["swap_acceptance"].as_array().unwrap().len(), 0);

    // Predict before any points are configured: a validation failure.
    let out = run(d, &["predict", "--config", "config.toml"]);
    assert_exit(&out, 2, "predict without points");

    let out = run(
        d,
        &[
            "predict",
            "--config",
            "config.toml",
            "--grid",
            "x1=0:1:0.1@x2=0.5",
            "--point",
            "0.3,0.7",
        ],
    );
    assert_exit(&out, 0, "predict");
    let preds: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("predictions.json")).unwrap()).unwrap();
    let records = preds.as_array().unwrap();
    // The explicit point first, then the eleven grid points (inclusive
    // endpoints).
    assert_eq!(records.len(), 12);
    assert_eq!(records[0]["x_new"][0], 0.3);
    assert_eq!(records[0]["x_new"][1], 0.7);
    for rec in &records[1..] {
        assert_eq!(rec["x_new"][1], 0.5);
    }
    for rec in records {
        for row in rec["edge_prob"].as_array().unwrap() {
            for v in row.as_array().unwrap() {
                let v = v.as_f64().unwrap();
                assert!((0.0..=1.0).contains(&v), "edge probability {v} out of range");
            }
        }
        assert_eq!(rec["all_stable"], true);
    }

    let out = run(
        d,
        &[
            "export-graph",
            "--config",
            "config.toml",
            "--predictions",
            "predictions.json",
        ],
    );
    assert_exit(&out, 0, "export-graph");
    assert!(d.join("location_000.dot").exists());
    assert!(d.join("location_011.dot").exists());

    // The DOT edges are exactly the probability entries above the threshold.
    let rec = &records[0];
    let mut want = BTreeSet::new();
    for (j, row) in rec["edge_prob"].as_array().unwrap().iter().enumerate() {
        for (k, v) in row.as_array().unwrap().iter().enumerate() {
            if j != k && v.as_f64().unwrap() > 0.5 {
                // Edge source is gene k+1, target gene j+1, one-based names.
                want.insert((format!("g{}", k + 1), format!("g{}", j + 1)));
            }
        }
    }
    let dot = fs::read_to_string(d.join("location_000.dot")).unwrap();
    let mut got = BTreeSet::new();
    for line in dot.lines() {
        if let Some((lhs, rhs)) = line.trim().split_once(" -> ") {
            let src = lhs.trim_matches('"').to_string();
            let dst = rhs.split('[').next().unwrap().trim().trim_matches('"').to_string();
            got.insert((src, dst));
        }
    }
    assert_eq!(got, want, "DOT edge set should match thresholded probabilities");

    let out = run(d, &["evaluate", "--config", "config.toml"]);
    assert_exit(&out, 0, "evaluate");
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["threshold"], 0.5);
    assert!(metrics["mcc_definition"].as_str().unwrap().contains("sqrt"));
    // Smooth-scenario truth scores per-entry curve recovery.
    let entries = metrics["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 3);
    for e in entries {
        assert!(e["rmse"].as_f64().unwrap().is_finite());
        let cov = e["coverage"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&cov));
    }
}

#[test]
fn per_unit_graph_export_respects_the_unit_list() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("config.toml"), FLOW_CONFIG).unwrap();
    assert_exit(&run(d, &["simulate", "--config", "config.toml"]), 0, "simulate");
    assert_exit(
        &run(d, &["fit", "--config", "config.toml", "--quiet"]),
        0,
        "fit",
    );

    let out = run(
        d,
        &[
            "export-graph",
            "--config",
            "config.toml",
            "--trace",
            "trace.jsonl",
            "--units",
            "0,3",
        ],
    );
    assert_exit(&out, 0, "export-graph --trace");
    assert!(d.join("unit_0000.dot").exists());
    assert!(d.join("unit_0003.dot").exists());
    assert!(!d.join("unit_0001.dot").exists());
    // The union graph is always written and contains every node label.
    let union = fs::read_to_string(d.join("union.dot")).unwrap();
    for g in ["g1", "g2", "g3"] {
        assert!(union.contains(g));
    }

    let out = run(
        d,
        &[
            "export-graph",
            "--config",
            "config.toml",
            "--trace",
            "trace.jsonl",
            "--units",
            "99",
        ],
    );
    assert_exit(&out, 2, "unit index out of range");
}
