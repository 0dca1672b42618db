use std::path::Path;
use std::process::{Command, Output};

use dphase::cli_report::parse_config;

const BASE: &str = "\
mode = continue
domain.dim = 2
domain.shape = square
domain.resolution = 24
weight.preset = parabola
weight.c = 4
rhs.preset = constant
rhs.scale = 0.5
exponents.q = 1.3
exponents.k_max = 6
";

fn dphase(dir: &Path, config: &str, overrides: &[&str]) -> Output {
    let path = dir.join("run.cfg");
    std::fs::write(&path, config).unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dphase"));
    cmd.arg(&path);
    for o in overrides {
        cmd.arg("--override").arg(o);
    }
    cmd.output().unwrap()
}

fn with_outputs(dir: &Path, tag: &str) -> String {
    format!(
        "{BASE}output.csv = {}\noutput.json = {}\n",
        dir.join(format!("{tag}.csv")).display(),
        dir.join(format!("{tag}.json")).display()
    )
}

fn json(dir: &Path, tag: &str) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{tag}.json"))).unwrap()).unwrap()
}

#[test]
fn zero_load_is_certified() {
    let dir = tempfile::tempdir().unwrap();
    let out = dphase(dir.path(), &with_outputs(dir.path(), "zero"), &["rhs.scale=0"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(dir.path(), "zero")["certificate"]["verdict"], "certified");
    let csv = std::fs::read_to_string(dir.path().join("zero.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    for row in csv.lines().skip(1) {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 13);
        assert_eq!(cols[9], "1.0");
    }
}

#[test]
fn strict_h0_violation_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = BASE.replace("exponents.q = 1.3", "exponents.q = 1.6").replace("k_max = 6", "k_max = 5");
    let out = dphase(dir.path(), &format!("{text}strict_h0 = true\n"), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("(H0)"));
}

#[test]
fn exit_code_follows_the_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dphase(dir.path(), &with_outputs(dir.path(), "std"), &[]);
    let summary = json(dir.path(), "std");
    let expected = match summary["certificate"]["verdict"].as_str().unwrap() {
        "failed" => 2,
        _ => 0,
    };
    assert_eq!(out.status.code(), Some(expected));
    assert_eq!(summary["exit_code"], expected);
    let csv = std::fs::read_to_string(dir.path().join("std.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
}

#[test]
fn non_convergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = dphase(dir.path(), &with_outputs(dir.path(), "nc"), &["solver.max_iter=1"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(json(dir.path(), "nc")["aborted"].is_object());
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dphase(dir.path(), &BASE.replace("exponents.k_max = 6\n", ""), &[]).status.code(), Some(1));
    assert_eq!(dphase(dir.path(), BASE, &["exponents.q=0.9"]).status.code(), Some(1));
    assert_eq!(dphase(dir.path(), BASE, &["solver.damping=2"]).status.code(), Some(1));
}

#[test]
fn runs_are_byte_identical_and_echo_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let text = with_outputs(dir.path(), "det");
    dphase(dir.path(), &text, &[]);
    let csv1 = std::fs::read(dir.path().join("det.csv")).unwrap();
    let json1 = std::fs::read(dir.path().join("det.json")).unwrap();
    dphase(dir.path(), &text, &[]);
    assert_eq!(csv1, std::fs::read(dir.path().join("det.csv")).unwrap());
    assert_eq!(json1, std::fs::read(dir.path().join("det.json")).unwrap());

    let echo = json(dir.path(), "det")["config"].as_str().unwrap().to_string();
    assert_eq!(parse_config(&echo).unwrap(), parse_config(&text).unwrap());
}

#[test]
fn solve_and_check_weight_modes() {
    let dir = tempfile::tempdir().unwrap();
    let solve = with_outputs(dir.path(), "solve").replace("mode = continue", "mode = solve");
    let out = dphase(dir.path(), &format!("{solve}exponents.p = 1.25\n"), &[]);
    assert_eq!(out.status.code(), Some(0));
    let s = json(dir.path(), "solve");
    assert_eq!(s["solve"]["converged"], true);
    assert_eq!(std::fs::read_to_string(dir.path().join("solve.csv")).unwrap().lines().count(), 2);

    let check = with_outputs(dir.path(), "check").replace("mode = continue", "mode = check_weight");
    assert_eq!(dphase(dir.path(), &check, &[]).status.code(), Some(0));
    assert_eq!(json(dir.path(), "check")["h0"]["verdict"], "pass");
    let ring = check.replace("preset = parabola", "preset = ring") + "weight.k = 4\nweight.r0 = 1\n";
    assert_eq!(dphase(dir.path(), &ring, &[]).status.code(), Some(2));
}

#[test]
fn sweep_writes_one_csv_per_scale() {
    let dir = tempfile::tempdir().unwrap();
    let text = with_outputs(dir.path(), "sw").replace("mode = continue", "mode = sweep") + "sweep.rhs_scales = 0, 0.25\n";
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dphase"));
    let cfg = dir.path().join("sweep.cfg");
    std::fs::write(&cfg, text).unwrap();
    let out = cmd.arg(&cfg).env("DPHASE_THREADS", "2").output().unwrap();
    assert!(matches!(out.status.code(), Some(0) | Some(2)));
    let s = json(dir.path(), "sw");
    assert_eq!(s["sweep"].as_array().unwrap().len(), 2);
    assert_eq!(s["sweep"][0]["certificate"]["verdict"], "certified");
    for i in 0..2 {
        let csv = std::fs::read_to_string(dir.path().join(format!("sw.s{i}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 7);
    }
}
