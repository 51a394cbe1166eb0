use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_difincl"))
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("problems").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn solve_into(problem: &Path, grid_n: &str, dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["solve", "--problem", problem.to_str().unwrap(), "--grid-n", grid_n, "--out-dir", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn solve_example1_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = solve_into(&bundled("example1.json"), "6", dir.path(), &["--diagnostics"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path());
    assert_eq!(r["initial_value"].as_f64().unwrap(), 1.0);
    assert_eq!(r["termination"], "global_certificate");
    assert_eq!(r["certificate"], true);
    assert!(r["iterations"][0]["I"].as_f64().is_some());
    assert!(r["surface_residual_max"].as_f64().unwrap() <= 1e-2);
    let plot = fs::read_to_string(dir.path().join("plot.csv")).unwrap();
    assert!(plot.starts_with("t,x1,x2,z1,z2,l1,l2,u1,u2\n"));
    assert_eq!(plot.lines().count(), 7);
    let traj = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,x1,x2,z1,z2\n"));
    let diag = fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().count(), 1 + 6 * 2);
}

#[test]
fn solve_example2_reports_initial_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = solve_into(&bundled("example2.json"), "11", dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(report(dir.path())["initial_value"].as_f64().unwrap(), 8.125);
}

#[test]
fn reloaded_solution_terminates_at_once() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    assert_eq!(solve_into(&bundled("example1.json"), "6", &first, &[]).status.code(), Some(0));
    let initial = first.join("trajectory.csv");
    let out = solve_into(&bundled("example1.json"), "6", &second, &["--initial", initial.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let (a, b) = (report(&first), report(&second));
    let steps = b["iterations"].as_array().unwrap().len() - 1;
    assert!(steps <= 2, "{steps} iterations after reload");
    let (ia, ib) = (a["final_value"].as_f64().unwrap(), b["initial_value"].as_f64().unwrap());
    assert!((ia - ib).abs() <= 1e-10);
}

#[test]
fn malformed_json_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ \"n\": 2, ").unwrap();
    let out = solve_into(&bad, "6", &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "parse");
    assert!(!err["message"].as_str().unwrap().is_empty());
}

#[test]
fn invalid_problem_lists_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(
        &bad,
        r#"{"n": 2, "T": 1.0, "interval_form": {"A": [[0, 1], [1, 0]], "abar": [1, 1]},
            "x0": [0, 0, 0], "fixed_end": [{"index": 3, "value": 1.0}]}"#,
    )
    .unwrap();
    let out = solve_into(&bad, "6", &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "validation");
    assert!(err["diagnostics"].as_array().unwrap().len() >= 2);
}

#[test]
fn missing_problem_file_is_an_input_error() {
    let out = run(&["evaluate", "--problem", "/nonexistent/problem.json"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "io");
}

#[test]
fn infeasible_problem_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("frozen.json");
    fs::write(
        &p,
        r#"{"n": 1, "T": 1.0, "rows": [{"linear": [0.0]}], "x0": [0.0],
            "fixed_end": [{"index": 1, "value": 1.0}]}"#,
    )
    .unwrap();
    let out = solve_into(&p, "6", &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(report(&dir.path().join("out"))["certificate"], false);
}

#[test]
fn evaluate_prints_components() {
    let out = run(&["evaluate", "--problem", bundled("example2.json").to_str().unwrap(), "--grid-n", "4"]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["I"].as_f64().unwrap(), 8.125);
    assert_eq!(v["phi"].as_f64().unwrap(), 0.0);
}

#[test]
fn check_gradient_passes_on_examples() {
    for (name, n) in [("example1.json", "6"), ("example2.json", "11")] {
        let out = run(&[
            "check-gradient",
            "--problem",
            bundled(name).to_str().unwrap(),
            "--grid-n",
            n,
            "--samples",
            "10",
            "--directions",
            "3",
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
        let first = String::from_utf8(out.stdout).unwrap();
        let v: Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
        assert_eq!(v["passed"], true);
        assert!(v["max_rel_error"].as_f64().unwrap() <= 1e-3);
    }
}

#[test]
fn findim_writes_iterate_log() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("wells.json");
    fs::write(&p, r#"{"n": 2, "members": ["(x1 - 1)^2 + x2^2", "(x1 + 1)^2 + x2^2"]}"#).unwrap();
    let out = run(&["findim", "--problem", p.to_str().unwrap(), "--start", "0,1"]);
    assert_eq!(out.status.code(), Some(0));
    let log = String::from_utf8(out.stdout).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next().unwrap(), "k,x1,x2,phi,psi,alpha");
    let phis: Vec<f64> = lines.map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert!(phis.windows(2).all(|w| w[1] < w[0]));

    let out = run(&["findim", "--problem", p.to_str().unwrap(), "--start", "-0.5,2", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("findim.csv").exists());
}

#[test]
fn findim_rejects_wrong_start_length() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.json");
    fs::write(&p, r#"{"n": 2, "members": ["x1^2 + x2^2"]}"#).unwrap();
    let out = run(&["findim", "--problem", p.to_str().unwrap(), "--start", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flag_is_an_input_error() {
    assert_eq!(run(&["solve", "--bogus"]).status.code(), Some(2));
}
