use std::path::Path;
use std::process::Command;

use radial_plap::cli::run;
use radial_plap::grid::{make_grid, Grading};
use radial_plap::mountain_pass::{solve, MinimaxOptions};
use radial_plap::nonlinearity::Nonlinearity;

const BIN: &str = env!("CARGO_BIN_EXE_radial-plap");

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

#[test]
fn help_and_bad_usage_exit_codes() {
    assert_eq!(run(["radial-plap", "--help"]), 0);
    assert_eq!(run(["radial-plap", "--version"]), 0);
    assert_eq!(run(["radial-plap", "frobnicate"]), 2);
    assert_eq!(run(["radial-plap", "solve", "--grid-n", "many"]), 2);
}

#[test]
fn configuration_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = out_arg(tmp.path());
    assert_eq!(run(["radial-plap", "solve", "--out", &o]), 2, "missing f");
    assert_eq!(run(["radial-plap", "solve", "--p", "1.5", "--f", "pure_power:3", "--out", &o]), 2);
    assert_eq!(run(["radial-plap", "sweep", "--p", "3", "--q-list", "3,5", "--out", &o]), 2);
    assert_eq!(run(["radial-plap", "solve", "--f", "mystery:1", "--out", &o]), 2);
    assert_eq!(run(["radial-plap", "solve", "--grading", "spiral", "--f", "pure_power:5", "--out", &o]), 2);

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"problem": {"p": 3, "unknown": 1}}"#).unwrap();
    assert_eq!(run(["radial-plap", "validate", "--config", bad.to_str().unwrap()]), 2);
    let missing = tmp.path().join("missing.json");
    assert_eq!(run(["radial-plap", "validate", "--config", missing.to_str().unwrap()]), 2);
}

#[test]
fn errors_are_reported_as_json_on_stderr() {
    let out = Command::new(BIN).args(["solve", "--p", "3"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let line = String::from_utf8(out.stderr).unwrap();
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(v["error"], "invalid_parameter");
    assert!(v["message"].as_str().unwrap().contains("--f"));
}

#[test]
fn validate_defaults_pass_and_fault_injection_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.json");
    std::fs::write(&empty, "{}").unwrap();
    assert_eq!(run(["radial-plap", "validate", "--config", empty.to_str().unwrap()]), 0);
    assert_eq!(run(["radial-plap", "validate", "--blend-width", "0"]), 1);
}

#[test]
fn p_equal_two_warns_on_stderr() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["shoot", "--dirichlet-G", "--p", "2", "--N", "1", "--out", &out_arg(tmp.path())])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("0.648054"));
}

#[test]
fn solve_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let code = run([
        "radial-plap", "solve", "--p", "3", "--N", "2", "--f", "pure_power:5", "--grid-n", "256", "--out", &out_arg(tmp.path()),
    ]);
    assert_eq!(code, 0);
    for f in ["solve_report.json", "profile.csv", "profile.dat", "trace.csv"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("solve_report.json")).unwrap()).unwrap();
    assert_eq!(rep["summary"]["accepted"], true);
    assert_eq!(rep["N"], 2);
    let csv = std::fs::read_to_string(tmp.path().join("profile.csv")).unwrap();
    assert!(csv.starts_with("r,u\n"));
    assert!(!csv.contains('\r'));
    assert_eq!(csv.lines().count(), 258);
}

#[test]
fn neumann_shoot_writes_profile() {
    let tmp = tempfile::tempdir().unwrap();
    let code = run(["radial-plap", "shoot", "--p", "3", "--N", "2", "--f", "pure_power:5", "--out", &out_arg(tmp.path())]);
    assert_eq!(code, 0);
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("shoot_report.json")).unwrap()).unwrap();
    assert_eq!(rep["mode"], "neumann");
    let a = rep["summary"]["parameter"].as_f64().unwrap();
    assert!(a > 0.9 && a < 1.0, "{a}");
}

#[test]
fn short_sweep_skips_rate_fitting() {
    let tmp = tempfile::tempdir().unwrap();
    let code = run([
        "radial-plap", "sweep", "--p", "3", "--N", "2", "--q-list", "5,10", "--grid-n", "256", "--out", &out_arg(tmp.path()),
    ]);
    assert_eq!(code, 0);
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("sweep_summary.json")).unwrap()).unwrap();
    assert!(s["report"].is_null());
    assert_eq!(s["rows"].as_array().unwrap().len(), 2);
    assert!(tmp.path().join("profile_q5.dat").exists());
    assert!(tmp.path().join("G.dat").exists());
    let csv = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    assert!(csv.starts_with("q,c_q,u0,u1,sup_dist_G,norm_W1p,identity_defect\n"));
}

#[test]
fn wells_yield_one_solution_per_cone() {
    let nl = Nonlinearity::wells(3.0, [1.0, 2.0, 3.0], 0.1).unwrap();
    let grid = make_grid(256, 2, Grading::Uniform).unwrap();
    let mut ranges = Vec::new();
    for cone_index in [0, 1] {
        let opts = MinimaxOptions { cone_index, ..MinimaxOptions::default() };
        let (rep, _) = solve(&nl, &grid, &opts).unwrap();
        assert!(rep.accepted(), "cone {cone_index}");
        let (lo, hi) = (rep.u_star.min_value(), rep.u_star.max_value());
        assert!(lo >= rep.states.u_minus - 1e-10 && hi <= rep.states.u_plus_or_inf() + 1e-10);
        assert!(lo < rep.states.u_zero && rep.states.u_zero < hi);
        ranges.push((lo, hi));
    }
    assert!(ranges[0].1 < ranges[1].0, "{ranges:?}");
}
