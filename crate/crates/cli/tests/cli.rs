use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dskfilt::io::{load_system, parse_system, system_to_json};
use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dskfilt"));
    c.env_remove("DSKFILT_OUT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Runs the example with a short horizon into a fresh directory.
fn example_dir(extra: &[&str]) -> (TempDir, Output) {
    let dir = TempDir::new().unwrap();
    let mut args = vec!["example", "--out-dir", s(dir.path())];
    args.extend_from_slice(extra);
    let out = run(&args);
    (dir, out)
}

fn disc_system(dir: &Path) -> PathBuf {
    let (tmp, out) = example_dir(&["--t-final", "1", "--dist-window", "0.2,0.6"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let path = dir.join("system.json");
    fs::copy(tmp.path().join("system.json"), &path).unwrap();
    path
}

fn write_json(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, v.to_string()).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn reference_filter(dir: &Path) -> PathBuf {
    write_json(
        dir,
        "reference.json",
        &json!({
            "N": [[-1.0653]],
            "T": [[1.0, -0.0, 0.0653]],
            "L": [[1.0, -0.2614]],
            "M": [[-0.0779e-13, 0.1553e-13]],
            "P": [[-1.0, 0.2614]]
        }),
    )
}

#[test]
fn example_writes_all_artifacts() {
    let (dir, out) = example_dir(&[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in [
        "system.json",
        "synthesis_report.json",
        "trajectory.csv",
        "certificate.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let report = read_json(&dir.path().join("synthesis_report.json"));
    assert_eq!(report["stage"], "complete");
    assert_eq!(report["feasible"], true);
    assert!(report["res_a"].as_f64().unwrap() <= 1e-8);
    assert!(report["lambda_max_pi"].as_f64().unwrap() <= 1e-7);
    let cert = read_json(&dir.path().join("certificate.json"));
    assert_eq!(cert["certificates"][0]["satisfied"], true);
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,x1,x2,x3,w,z,zhat,e,v,u,y1,y2,"));
    assert!(csv.lines().any(|l| l == "satisfied=true"));
}

#[test]
fn example_system_round_trips_bit_for_bit() {
    let (dir, out) = example_dir(&["--t-final", "1", "--dist-window", "0.2,0.6"]);
    assert_eq!(code(&out), 0);
    let path = dir.path().join("system.json");
    let desc = load_system(&path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(system_to_json(&desc), text);
    let again = parse_system(&system_to_json(&desc), "again").unwrap();
    let bits = |m: &dskfilt::Mat| m.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&desc.system.a), bits(&again.system.a));
    assert_eq!(bits(&desc.system.g), bits(&again.system.g));
    assert_eq!(bits(&desc.system.d), bits(&again.system.d));
}

#[test]
fn example_bisection_is_reported() {
    let (dir, out) = example_dir(&["--bisect", "--t-final", "1", "--dist-window", "0.2,0.6"]);
    assert_eq!(code(&out), 0);
    let report = read_json(&dir.path().join("synthesis_report.json"));
    let g = report["gamma_star"].as_f64().unwrap();
    assert!(g > 0.0 && g <= 1.4);
}

#[test]
fn example_certificate_holds_over_ten_seeds() {
    let (dir, out) = example_dir(&["--runs", "10", "--seed", "100"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let cert = read_json(&dir.path().join("certificate.json"));
    assert_eq!(cert["runs"], 10);
    assert_eq!(cert["satisfied"], 10);
}

#[test]
fn output_directory_from_environment() {
    let dir = TempDir::new().unwrap();
    let out = bin()
        .args(["example", "--t-final", "1", "--dist-window", "0.2,0.6"])
        .env("DSKFILT_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(dir.path().join("synthesis_report.json").exists());
}

#[test]
fn synth_rolling_disc() {
    let dir = TempDir::new().unwrap();
    let sys = disc_system(dir.path());
    let out_dir = dir.path().join("out");
    let out = run(&["synth", s(&sys), "--gamma", "1.4", "--out-dir", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_json(&out_dir.join("synthesis_report.json"));
    assert!(report["res_a"].as_f64().unwrap() <= 1e-8);
    assert!(report["res_b"].as_f64().unwrap() <= 1e-8);
    assert!(report["N"][0][0].as_f64().unwrap() < 0.0);
    assert!(report["beta"].is_null());
}

#[test]
fn synth_rank_failure_exits_2() {
    let dir = TempDir::new().unwrap();
    let sys = disc_system(dir.path());
    let mut v = read_json(&sys);
    v["C"] = json!([[1, 0, 0], [0, 0, 0]]);
    v["K"] = json!([[0, 0, 1]]);
    let bad = write_json(dir.path(), "bad.json", &v);
    let out = run(&["synth", s(&bad), "--out-dir", s(dir.path())]);
    assert_eq!(code(&out), 2);
    let report = read_json(&dir.path().join("synthesis_report.json"));
    assert_eq!(report["stage"], "rank_condition");
    assert_eq!(report["rank_condition"]["holds"], false);
}

#[test]
fn synth_infeasible_exits_3_and_writes_report() {
    let dir = TempDir::new().unwrap();
    let sys = disc_system(dir.path());
    let out = run(&["synth", s(&sys), "--gamma", "1e-6", "--out-dir", s(dir.path())]);
    assert_eq!(code(&out), 3);
    let report = read_json(&dir.path().join("synthesis_report.json"));
    assert_eq!(report["stage"], "lmi");
    assert!(report["N"].is_null());
}

#[test]
fn invalid_arguments_exit_1() {
    let dir = TempDir::new().unwrap();
    let sys = disc_system(dir.path());
    let out = run(&["synth", s(&sys), "--gamma", "0", "--out-dir", s(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("gamma"));
    assert_eq!(code(&run(&["synth"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn malformed_system_file_names_line() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("broken.json");
    fs::write(&p, "{\n  \"E\": [[1, 0],\n  oops\n}").unwrap();
    let out = run(&["synth", s(&p), "--out-dir", s(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn verify_reference_filter() {
    let dir = TempDir::new().unwrap();
    let sys = disc_system(dir.path());
    let filt = reference_filter(dir.path());
    let loose = run(&["verify", s(&sys), s(&filt), "--tol", "5e-3"]);
    assert_eq!(code(&loose), 0, "{}", stdout(&loose));
    assert!(stdout(&loose).contains("eig(N): [-1.0653]  hurwitz: true"));
    let strict = run(&["verify", s(&sys), s(&filt), "--tol", "1e-9"]);
    assert_eq!(code(&strict), 4);
}

#[test]
fn verify_accepts_synthesis_report() {
    let (dir, out) = example_dir(&["--t-final", "1", "--dist-window", "0.2,0.6"]);
    assert_eq!(code(&out), 0);
    let d = dir.path();
    let v = run(&["verify", s(&d.join("system.json")), s(&d.join("synthesis_report.json"))]);
    assert_eq!(code(&v), 0, "{}", stdout(&v));
}

#[test]
fn verify_zero_filter_against_zero_system() {
    let dir = TempDir::new().unwrap();
    let z = |r: usize, c: usize| json!(vec![vec![0.0; c]; r]);
    let sys = write_json(
        dir.path(),
        "zero.json",
        &json!({"E": z(2, 2), "A": z(2, 2), "B": z(2, 1), "C": z(1, 2), "D": z(2, 1),
                "F": z(2, 1), "G": z(1, 1), "H": z(1, 1), "K": z(1, 2), "rho": 0.0,
                "nonlinearity": "zero"}),
    );
    let filt = write_json(
        dir.path(),
        "zf.json",
        &json!({"N": z(1, 1), "T": z(1, 2), "L": z(1, 1), "M": z(1, 1)}),
    );
    let out = run(&["verify", s(&sys), s(&filt)]);
    let text = stdout(&out);
    assert!(text.contains("res_a: 0e0") && text.contains("res_b: 0e0"), "{text}");
    // N = 0 has an eigenvalue on the imaginary axis.
    assert!(text.contains("hurwitz: false"));
    assert_eq!(code(&out), 4);
}

#[test]
fn verify_dimension_mismatch_exits_1() {
    let dir = TempDir::new().unwrap();
    let sys = disc_system(dir.path());
    let filt = write_json(
        dir.path(),
        "f.json",
        &json!({"N": [[-1]], "T": [[1, 0]], "L": [[1, 0]], "M": [[0, 0]]}),
    );
    let out = run(&["verify", s(&sys), s(&filt)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("T is 1x2"));
}

fn synthesized(dir: &Path) -> (PathBuf, PathBuf) {
    let (tmp, out) = example_dir(&["--t-final", "1", "--dist-window", "0.2,0.6"]);
    assert_eq!(code(&out), 0);
    let sys = dir.join("system.json");
    let rep = dir.join("report.json");
    fs::copy(tmp.path().join("system.json"), &sys).unwrap();
    fs::copy(tmp.path().join("synthesis_report.json"), &rep).unwrap();
    (sys, rep)
}

#[test]
fn simulate_default_scenario() {
    let dir = TempDir::new().unwrap();
    let (sys, rep) = synthesized(dir.path());
    let out = run(&["simulate", s(&sys), s(&rep), "--out-dir", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.contains('=')).count(), 1 + 10_001);
}

#[test]
fn simulate_without_disturbance_converges() {
    let dir = TempDir::new().unwrap();
    let (sys, rep) = synthesized(dir.path());
    let out = run(&[
        "simulate",
        s(&sys),
        s(&rep),
        "--dist-amplitude",
        "0",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 0);
    let cert = read_json(&dir.path().join("certificate.json"));
    assert!(cert["final_error"].as_f64().unwrap() <= 1e-3);
}

#[test]
fn simulate_tiny_gamma_violates_certificate() {
    let dir = TempDir::new().unwrap();
    let (sys, rep) = synthesized(dir.path());
    let out = run(&[
        "simulate",
        s(&sys),
        s(&rep),
        "--gamma",
        "0.0001",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 5);
}

#[test]
fn simulate_rejects_inconsistent_initial_state() {
    let dir = TempDir::new().unwrap();
    let (sys, rep) = synthesized(dir.path());
    let out = run(&[
        "simulate",
        s(&sys),
        s(&rep),
        "--x0",
        "0.1,0.2,0.15",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("residual"), "{}", stderr(&out));
}

#[test]
fn simulate_derived_beta() {
    let dir = TempDir::new().unwrap();
    let (sys, rep) = synthesized(dir.path());
    let out = run(&[
        "simulate",
        s(&sys),
        s(&rep),
        "--beta",
        "derived",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 0);
    let cert = read_json(&dir.path().join("certificate.json"));
    assert_eq!(cert["beta"], cert["beta_derived"]);
    assert_eq!(cert["beta_sufficient"], true);
    // Without Q the offset cannot be derived.
    let filt = reference_filter(dir.path());
    let out = run(&[
        "simulate",
        s(&sys),
        s(&filt),
        "--beta",
        "derived",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 1);
}
