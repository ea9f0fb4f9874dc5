//! The `histagg` binary end to end: exit codes, report layout, determinism.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn histagg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_histagg")).args(args).output().expect("binary runs")
}

fn report(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn check_theorems_on_example_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = histagg(&[
        "--process", "example_chain", "--gamma", "0.5", "--pipeline", "check-theorems",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["pipeline"], "check-theorems");
    assert_eq!(r["process"]["name"], "example_chain");
    assert_eq!(r["phi"]["states"].as_array().unwrap().len(), 2);
    assert_eq!(r["dispersion"], "uniform");
    assert_eq!(r["passed"], true);
    assert!(r["truncation"]["slack"].as_f64().unwrap() <= 1e-10);
    let reports = r["result"]["reports"].as_array().unwrap();
    assert!(reports.iter().all(|x| x["applicable"] == false || x["holds"] == true));
    assert!(out.join("bounds.csv").exists());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("PASS"));
}

#[test]
fn counterexample_reports_the_reversal() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ce");
    let o = histagg(&[
        "--process", "counterexample", "--gamma", "0", "--pipeline", "check-theorems",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert_eq!(r["dispersion"], "stationary");
    let text = r["result"].to_string();
    assert!(text.contains("= beta differs from"), "{text}");
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let o = histagg(&[
            "--process", "example_chain", "--gamma", "0.5", "--pipeline", "estimate", "--seed", "7",
            "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let mut files: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        files
            .into_iter()
            .map(|p| (p.file_name().unwrap().to_owned(), std::fs::read(&p).unwrap()))
            .collect::<Vec<_>>()
    };
    let (a, b) = (run("a"), run("b"));
    assert!(a.len() >= 2);
    assert_eq!(a, b);
}

#[test]
fn malformed_config_exits_2_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("never");
    let cfg = write_config(tmp.path(), r#"{"process": "example_chain", "pipeline": "solve", "#);
    let o = histagg(&["--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());

    let cfg = write_config(tmp.path(), r#"{"process": "example_chain", "pipeline": "solve", "colour": 1}"#);
    let o = histagg(&["--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn bad_names_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let out = out.to_str().unwrap();
    for args in [
        vec!["--process", "example_chain", "--pipeline", "nonsense", "--out", out],
        vec!["--process", "no_such_process", "--pipeline", "solve", "--out", out],
        vec!["--process", "example_chain", "--gamma", "1.0", "--pipeline", "solve", "--out", out],
        vec!["--process", "example_chain", "--pipeline", "solve"],
        vec!["--bogus-flag"],
    ] {
        let o = histagg(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
    assert!(!Path::new(out).exists());
}

#[test]
fn failed_assertion_exits_1_with_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("strict");
    let cfg = write_config(
        tmp.path(),
        r#"{"process": "example_chain", "gamma": 0.5, "pipeline": "estimate",
            "params": {"n_grid": [100, 1000], "seeds": [1], "max_error": 1e-9}}"#,
    );
    let o = histagg(&["--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert_eq!(r["passed"], false);
    assert!(r["assertions"].as_array().unwrap().iter().any(|a| a["passed"] == false));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn flags_override_config_and_paths_resolve_next_to_it() {
    let tmp = tempfile::tempdir().unwrap();
    let process = r#"{"builtin": {"name": "counterexample"}, "gamma": 0.9}"#;
    std::fs::write(tmp.path().join("proc.json"), process).unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"process": "proc.json", "gamma": 0.2, "depth": 5, "pipeline": "solve", "out": "ignored"}"#,
    );
    let out = tmp.path().join("solved");
    let o = histagg(&["--config", &cfg, "--gamma", "0.3", "--depth", "7", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert_eq!(r["process"]["gamma"], 0.3);
    assert_eq!(r["truncation"]["depth"], 7);
    assert!(out.join("history_values.csv").exists());
    assert!(!tmp.path().join("ignored").exists());
}

#[test]
fn every_pipeline_runs() {
    let tmp = tempfile::tempdir().unwrap();
    for pipeline in ["solve", "check-theorems", "extreme", "estimate", "search-phi"] {
        let out = tmp.path().join(pipeline);
        let o = histagg(&[
            "--process", "counterexample", "--gamma", "0.3", "--pipeline", pipeline,
            "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{pipeline}: {}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(report(&out)["pipeline"], pipeline);
    }
}
