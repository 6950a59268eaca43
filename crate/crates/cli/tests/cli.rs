use std::path::Path;
use std::process::{Command, Output};

use contmeas_cli::config::{parse_config_value, RunMode};
use contmeas_cli::output::read_csv;
use serde_json::{json, Value};

const QUBIT: &str = r#"{"dimension": 2, "hamiltonian": "sigma_x", "observable": "sigma_z", "initial_state": [1, 0]}"#;

fn system() -> Value {
    serde_json::from_str(QUBIT).unwrap()
}

fn contmeas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_contmeas"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, doc: &Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string(doc).unwrap()).unwrap();
    p.to_str().unwrap().to_owned()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn minimal_config_takes_defaults() {
    let doc = json!({"system": system(), "kappa": 1.0, "dt": 1e-3, "n_steps": 10});
    let cfg = parse_config_value(&doc, Path::new("."), Some(RunMode::Nonlinear)).unwrap();
    assert_eq!(cfg.n_trajectories, 1);
    assert_eq!(cfg.master_seed, 0);
    assert_eq!(cfg.save_stride, 1);
    assert_eq!(cfg.hbar, 1.0);
}

#[test]
fn negative_kappa_names_the_field() {
    let doc = json!({"system": system(), "kappa": -1.0, "dt": 1e-3, "n_steps": 10});
    let issues = parse_config_value(&doc, Path::new("."), None).unwrap_err();
    assert!(
        issues
            .iter()
            .any(|i| i.path == "kappa" && i.message.contains("positive")),
        "{issues:?}"
    );
}

#[test]
fn non_hermitian_observable_is_located() {
    let mut sys = system();
    sys["observable"] = json!([[[1, 0], [0.3, 0]], [[0, 0], [-1, 0]]]);
    let doc = json!({"system": sys, "kappa": 1.0, "dt": 1e-3, "n_steps": 10});
    let issues = parse_config_value(&doc, Path::new("."), None).unwrap_err();
    let msg = issues
        .iter()
        .find(|i| i.path == "system.observable")
        .expect("observable issue")
        .to_string();
    assert!(
        msg.contains("not Hermitian") && msg.contains("(0, 1)"),
        "{msg}"
    );
}

#[test]
fn all_issues_are_reported_together() {
    let doc = json!({"system": system(), "kappa": -1.0, "dt": 0.0, "n_steps": 10, "bogus": 1});
    let issues = parse_config_value(&doc, Path::new("."), None).unwrap_err();
    assert!(issues.len() >= 3, "{issues:?}");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let doc = json!({"system": system(), "kappa": 1.0, "dt": 1e-3, "n_steps": 200, "n_trajectories": 50, "save_stride": 20});
    let cfg = write_config(dir.path(), "c.json", &doc);
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        assert!(contmeas(&[
            "--config",
            &cfg,
            "--out-dir",
            out.to_str().unwrap(),
            "run-ensemble"
        ])
        .status
        .success());
    }
    for f in ["ensemble.csv", "trajectories.csv", "manifest.json"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let m = manifest(&dir.path().join("a"));
    assert_eq!(m["status"], "ok");
    assert!(m.get("timestamps").is_none());
    assert!(m["outputs"]["ensemble.csv"].as_str().unwrap().len() == 64);
}

#[test]
fn seed_flag_changes_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let doc = json!({"system": system(), "kappa": 1.0, "dt": 1e-3, "n_steps": 50});
    let cfg = write_config(dir.path(), "c.json", &doc);
    for seed in ["1", "2"] {
        let out = dir.path().join(seed);
        assert!(contmeas(&[
            "--config",
            &cfg,
            "--seed",
            seed,
            "--out-dir",
            out.to_str().unwrap(),
            "run-trajectory"
        ])
        .status
        .success());
    }
    let (_, a) = read_csv(&dir.path().join("1/record.csv")).unwrap();
    let (_, b) = read_csv(&dir.path().join("2/record.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn compare_reports_small_trace_distance() {
    let dir = tempfile::tempdir().unwrap();
    let doc = json!({"system": system(), "kappa": 1.0, "dt": 1e-3, "n_steps": 500, "n_trajectories": 2000, "save_stride": 100});
    let cfg = write_config(dir.path(), "c.json", &doc);
    let out = dir.path().join("cmp");
    assert!(contmeas(&[
        "--config",
        &cfg,
        "--out-dir",
        out.to_str().unwrap(),
        "compare-ensemble"
    ])
    .status
    .success());
    let (cols, rows) = read_csv(&out.join("compare.csv")).unwrap();
    assert_eq!(cols[..2], ["t".to_owned(), "trace_distance".to_owned()]);
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), 0.0);
    for r in &rows {
        assert!(r[1].parse::<f64>().unwrap() < 0.05, "{r:?}");
    }
}

#[test]
fn oversize_enumeration_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let doc = json!({"system": system(), "kappa": 1.0, "dt": 1e-2, "n_steps": 3, "lattice": {"points": 300}});
    let cfg = write_config(dir.path(), "c.json", &doc);
    let out = dir.path().join("rpi");
    let o = contmeas(&[
        "--config",
        &cfg,
        "--out-dir",
        out.to_str().unwrap(),
        "rpi-enumerate",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let m = manifest(&out);
    assert_eq!(m["status"], "error");
    assert_eq!(m["exit_code"], 2);
}

#[test]
fn coarse_step_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let doc = json!({"system": system(), "kappa": 10.0, "dt": 0.1, "n_steps": 5});
    let cfg = write_config(dir.path(), "c.json", &doc);
    let out = dir.path().join("t");
    let o = contmeas(&[
        "--config",
        &cfg,
        "--out-dir",
        out.to_str().unwrap(),
        "run-trajectory",
    ]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert_eq!(manifest(&out)["exit_code"], 3);
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let doc = json!({"system": system(), "kappa": -1.0, "dt": 1e-3, "n_steps": 5});
    let cfg = write_config(dir.path(), "c.json", &doc);
    let out = dir.path().join("t");
    let o = contmeas(&[
        "--config",
        &cfg,
        "--out-dir",
        out.to_str().unwrap(),
        "run-trajectory",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kappa"));
}

#[test]
fn free_particle_needs_no_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fp");
    let o = contmeas(&[
        "--out-dir",
        out.to_str().unwrap(),
        "free-particle",
        "--kappa",
        "1",
        "--grid-points",
        "512",
        "--box",
        "30",
        "--dt",
        "0.002",
        "--steps",
        "100",
        "--seeds",
        "0,1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (cols, rows) = read_csv(&out.join("report.csv")).unwrap();
    assert!(cols.iter().any(|c| c.contains("var_q")), "{cols:?}");
    assert!(!rows.is_empty());
}
