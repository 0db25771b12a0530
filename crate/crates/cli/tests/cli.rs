use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SINGLE: &str = r#"{"T": 1.0, "breakpoints": [0.0, 1.0], "r": [0.0], "mu": [[0.2]], "sigma": [[[1.0]]]}"#;
const ZERO_THETA: &str = r#"{"T": 1.0, "breakpoints": [0.0, 1.0], "r": [0.02], "mu": [[0.02]], "sigma": [[[0.3]]]}"#;

struct Sandbox {
    dir: TempDir,
}

impl Sandbox {
    fn new() -> Self {
        Sandbox {
            dir: TempDir::new().unwrap(),
        }
    }

    fn file(&self, name: &str, body: &str) -> PathBuf {
        let p = self.dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_varmerton"))
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Asserts a single `error[code]: message` line and the exit code.
fn assert_failure(out: &Output, code: &str, exit: i32) {
    assert_eq!(out.status.code(), Some(exit), "{}", stderr(out));
    let err = stderr(out);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with(&format!("error[{code}]: ")), "{err}");
}

fn worked(sb: &Sandbox) -> PathBuf {
    sb.file("single.json", SINGLE)
}

#[test]
fn solve_worked_example() {
    let sb = Sandbox::new();
    let m = worked(&sb);
    let out = run(&["solve", "--market", s(&m), "--alpha", "0.01", "--zeta", "0.1", "--gamma", "0.5"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v = json(&out);
    assert_eq!(v["regime"], "constraint-binding");
    assert!((v["gStar"].as_f64().unwrap() - 0.04898573548981138).abs() < 1e-12);
    assert!((v["jStar"].as_f64().unwrap() - 1.0046092131585136).abs() < 1e-12);
    assert!((v["aStar"].as_f64().unwrap() + 0.9f64.ln()).abs() < 1e-12);
    assert_eq!(v["portfolio"][0][0], v["control"][0][0]);
}

#[test]
fn solve_without_zeta_is_merton() {
    let sb = Sandbox::new();
    let m = worked(&sb);
    let out = run(&["solve", "--market", s(&m), "--gamma", "0.5"]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["regime"], "unconstrained-interior");
    assert!((v["jStar"].as_f64().unwrap() - 0.02f64.exp()).abs() < 1e-12);
    assert!((v["control"][0][0].as_f64().unwrap() - 0.4).abs() < 1e-12);
    assert!(v["aMax"].is_null());
}

#[test]
fn solve_linear_utility_unbounded_exits_zero() {
    let sb = Sandbox::new();
    let m = worked(&sb);
    let out = run(&["solve", "--market", s(&m), "--gamma", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["regime"], "unbounded");
    assert!(v["jStar"].is_null());
    assert!(v["control"].is_null());
}

#[test]
fn solve_csv_for_sample_market() {
    let market = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/two_asset.json");
    let out = run(&["solve", "--market", s(&market), "--alpha", "0.01", "--zeta", "0.1", "--gamma", "0.5", "--format", "csv"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "tStart,tEnd,y1,y2,pi1,pi2");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,0.4,"));
}

#[test]
fn solve_writes_to_out_file() {
    let sb = Sandbox::new();
    let m = worked(&sb);
    let dest = sb.path("sol.json");
    let out = run(&["solve", "--market", s(&m), "--gamma", "0.5", "--out", s(&dest)]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(&fs::read_to_string(dest).unwrap()).unwrap();
    assert_eq!(v["regime"], "unconstrained-interior");
}

#[test]
fn simulate_matches_closed_form() {
    let sb = Sandbox::new();
    let m = worked(&sb);
    let out = run(&[
        "simulate", "--market", s(&m), "--alpha", "0.01", "--zeta", "0.1", "--gamma", "0.5", "--paths", "1000000",
        "--seed", "3",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v = json(&out);
    assert!(v["zScore"].as_f64().unwrap().abs() <= 3.0, "{v}");
    assert!((v["jStar"].as_f64().unwrap() - 1.0046092131585136).abs() < 1e-12);
    let probes = v["simulation"]["quantileProbes"].as_array().unwrap();
    assert_eq!(probes.len(), 4);
    for p in probes {
        assert!(p["zScore"].as_f64().unwrap().abs() <= 4.0, "{p}");
    }
}

#[test]
fn simulate_is_byte_identical_for_a_seed() {
    let sb = Sandbox::new();
    let m = worked(&sb);
    let mut files = Vec::new();
    for (name, seed) in [("a.json", "11"), ("b.json", "11"), ("c.json", "12")] {
        let dest = sb.path(name);
        let out = run(&[
            "simulate", "--market", s(&m), "--alpha", "0.01", "--zeta", "0.1", "--gamma", "0.5", "--paths", "20000",
            "--seed", seed, "--out", s(&dest),
        ]);
        assert!(out.status.success());
        files.push(fs::read(dest).unwrap());
    }
    assert_eq!(files[0], files[1]);
    assert_ne!(files[0], files[2]);
}

#[test]
fn simulate_euler_and_samples_csv() {
    let sb = Sandbox::new();
    let m = worked(&sb);
    let out = run(&[
        "simulate", "--market", s(&m), "--gamma", "0.5", "--paths", "10", "--method", "euler", "--steps", "16",
        "--format", "csv",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("terminal_wealth,utility"));
    assert_eq!(text.lines().count(), 11);
}

#[test]
fn simulate_single_path_has_no_standard_error() {
    let sb = Sandbox::new();
    let m = worked(&sb);
    let out = run(&["simulate", "--market", s(&m), "--gamma", "0.5", "--paths", "1"]);
    assert!(out.status.success());
    let v = json(&out);
    assert!(v["simulation"]["stdError"].is_null());
    assert!(v["zScore"].is_null());
    assert!(v["simulation"]["meanUtility"].is_f64());
}

#[test]
fn simulate_unbounded_is_an_error() {
    let sb = Sandbox::new();
    let m = worked(&sb);
    assert_failure(&run(&["simulate", "--market", s(&m), "--gamma", "1"]), "unbounded", 2);
}

#[test]
fn verify_worked_example_passes() {
    let sb = Sandbox::new();
    let m = worked(&sb);
    let out = run(&["verify", "--market", s(&m), "--alpha", "0.01", "--zeta", "0.1", "--gamma", "0.5"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v = json(&out);
    assert_eq!(v["passed"], true);
    let c = &v["constraint"];
    assert!(c["admissible"].as_bool().unwrap());
    assert!((c["maxRatio"].as_f64().unwrap() - 1.0).abs() < 1e-8);
    assert_eq!(c["worstTime"].as_f64(), Some(1.0));
    assert!(c["times"].as_array().unwrap().len() >= 1000);
    assert!(v["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
}

#[test]
fn verify_rejects_inadmissible_control() {
    let sb = Sandbox::new();
    let m = worked(&sb);
    let ctl = sb.file("ctl.json", r#"{"breakpoints": [0.0, 0.5, 1.0], "values": [[0.1], [2.0]]}"#);
    let dest = sb.path("report.json");
    let out = run(&[
        "verify", "--market", s(&m), "--alpha", "0.01", "--zeta", "0.1", "--gamma", "0.5", "--control", s(&ctl),
        "--out", s(&dest),
    ]);
    assert_failure(&out, "verification-failed", 4);
    assert!(stderr(&out).contains("constraint"));
    let v: Value = serde_json::from_str(&fs::read_to_string(dest).unwrap()).unwrap();
    assert_eq!(v["controlSource"], "file");
    assert_eq!(v["constraint"]["admissible"], false);
    let worst = v["constraint"]["worstTime"].as_f64().unwrap();
    assert!(worst > 0.5 && worst <= 1.0, "{worst}");
    assert_eq!(v["passed"], false);
}

#[test]
fn verify_zero_theta_is_trivial() {
    let sb = Sandbox::new();
    let m = sb.file("zero.json", ZERO_THETA);
    let out = run(&["verify", "--market", s(&m), "--alpha", "0.01", "--zeta", "0.1", "--gamma", "0.5"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v = json(&out);
    assert_eq!(v["regime"], "zero-theta");
    assert_eq!(v["passed"], true);
    assert!(v["constraint"]["kValues"].as_array().unwrap().iter().all(|k| k.as_f64() == Some(0.0)));
    assert!(v["oracle"].is_null());
}

#[test]
fn verify_needs_a_bound() {
    let sb = Sandbox::new();
    let m = worked(&sb);
    assert_failure(&run(&["verify", "--market", s(&m), "--gamma", "0.5"]), "invalid-input", 2);
}

fn csv_rows(out: &Output) -> Vec<Vec<String>> {
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    text.lines().map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn zeta_sweep_switches_regime_once() {
    let sb = Sandbox::new();
    let m = worked(&sb);
    let out = run(&[
        "sweep", "--market", s(&m), "--alpha", "0.01", "--gamma", "0.5", "--param", "zeta", "--from", "0.01", "--to",
        "0.99", "--points", "99",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = csv_rows(&out);
    assert_eq!(rows[0], ["zeta", "gStar", "aStar", "jStar", "regime"]);
    let body = &rows[1..];
    assert_eq!(body.len(), 99);
    let j: Vec<f64> = body.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(j.windows(2).all(|w| w[1] >= w[0]));
    let flip = body.iter().position(|r| r[4] == "unconstrained-interior").unwrap();
    assert!(body[..flip].iter().all(|r| r[4] == "constraint-binding"));
    assert!(body[flip..].iter().all(|r| r[4] == "unconstrained-interior"));
    let before: f64 = body[flip - 1][0].parse().unwrap();
    let after: f64 = body[flip][0].parse().unwrap();
    assert!(before < 0.6056589557753825 && 0.6056589557753825 <= after);
}

#[test]
fn gamma_sweep_is_continuous() {
    let sb = Sandbox::new();
    let m = worked(&sb);
    let out = run(&[
        "sweep", "--market", s(&m), "--alpha", "0.01", "--zeta", "0.1", "--param", "gamma", "--from", "0.05", "--to",
        "0.95", "--points", "181", "--format", "json",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v = json(&out);
    assert_eq!(v["parameter"], "gamma");
    let j: Vec<f64> = v["rows"].as_array().unwrap().iter().map(|r| r["jStar"].as_f64().unwrap()).collect();
    assert_eq!(j.len(), 181);
    assert!(j.windows(2).all(|w| (w[1] - w[0]).abs() < 1e-3));
}

#[test]
fn alpha_sweep_flags_hypothesis_rows() {
    let sb = Sandbox::new();
    let m = worked(&sb);
    let out = run(&[
        "sweep", "--market", s(&m), "--zeta", "0.1", "--gamma", "0.5", "--param", "alpha", "--from", "0.001", "--to",
        "0.499", "--points", "50",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = csv_rows(&out);
    for r in &rows[1..] {
        let alpha: f64 = r[0].parse().unwrap();
        // |z_alpha| >= 0.4 iff alpha <= Phi(-0.4) = 0.3445783
        if alpha < 0.344 {
            assert_eq!(r[4], "constraint-binding", "{r:?}");
        } else if alpha > 0.345 {
            assert_eq!(r[4], "hypothesis-violated", "{r:?}");
            assert!(r[1].is_empty() && r[3].is_empty());
        }
    }
}

#[test]
fn sweep_range_outside_domain() {
    let sb = Sandbox::new();
    let m = worked(&sb);
    let out = run(&[
        "sweep", "--market", s(&m), "--alpha", "0.01", "--gamma", "0.5", "--param", "zeta", "--from", "0.5", "--to",
        "1.5", "--points", "3",
    ]);
    assert_failure(&out, "invalid-input", 2);
    assert!(out.stdout.is_empty());
}

#[test]
fn hypothesis_violation_exit_code() {
    let sb = Sandbox::new();
    let m = worked(&sb);
    let out = run(&["solve", "--market", s(&m), "--alpha", "0.4", "--zeta", "0.1", "--gamma", "0.5"]);
    assert_failure(&out, "hypothesis-violated", 3);
}

#[test]
fn invalid_inputs_exit_two() {
    let sb = Sandbox::new();
    let m = worked(&sb);
    let bad = sb.file("bad.json", r#"{"T": 1.0, "breakpoints": [0.0, 1.0], "r": [0.0], "mu": [[0.2]], "sigma": [[[0.0]]]}"#);
    let missing = sb.path("missing.json");
    let cases: Vec<Vec<&str>> = vec![
        vec!["solve", "--market", s(&m), "--gamma", "1.5"],
        vec!["solve", "--market", s(&m), "--gamma", "0.5", "--zeta", "0.1"],
        vec!["solve", "--market", s(&m), "--gamma", "0.5", "--alpha", "0.01", "--zeta", "1.0"],
        vec!["solve", "--market", s(&m), "--gamma", "0.5", "--endowment", "-1"],
        vec!["solve", "--market", s(&bad), "--gamma", "0.5"],
        vec!["solve", "--market", s(&missing), "--gamma", "0.5"],
        vec!["solve", "--gamma", "0.5"],
        vec!["simulate", "--market", s(&m), "--gamma", "0.5", "--paths", "0"],
        vec!["frobnicate"],
    ];
    for args in cases {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", stderr(&out));
        let err = stderr(&out);
        assert_eq!(err.lines().count(), 1, "{args:?}: {err}");
        assert!(err.starts_with("error["), "{args:?}: {err}");
    }
}
