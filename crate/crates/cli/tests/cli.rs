use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use etaquot_cli::{exit_code, run, EXIT_FAILED, EXIT_INPUT, EXIT_OK, EXIT_VIOLATION};
use tempfile::TempDir;

const DESK_PSI: &str = "(2 + 0.1*(2 - r))/r";

fn etaquot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_etaquot")).args(args).output().unwrap()
}

fn spec(dir: &Path, name: &str, json: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn run_with(cmd: &str, spec: &Path, out: &Path) -> Output {
    etaquot(&[cmd, "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

const SMALL_SWEEP: &str = r#"{
    "samples": 300,
    "configs": [
        {"n": 3, "k": 2, "l": 1, "theta": 1.0, "mu": 1.0},
        {"n": 4, "k": 3, "l": 0, "theta": 1.0, "mu": 0.5}
    ]
}"#;

#[test]
fn verify_writes_a_clean_report() {
    let dir = TempDir::new().unwrap();
    let s = spec(dir.path(), "sweep.json", SMALL_SWEEP);
    let out = dir.path().join("reports");
    let o = run_with("verify", &s, &out);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(csv.starts_with("n,k,l,theta,mu,inequality,"));
    assert!(csv.lines().count() > 2);
    for line in csv.lines().skip(1) {
        // empirical-infimum rows carry no threshold and report n/a
        let failures = line.split(',').nth(8).unwrap();
        assert!(failures == "0" || failures == "n/a", "{line}");
    }
}

#[test]
fn empty_sweep_succeeds() {
    let dir = TempDir::new().unwrap();
    let s = spec(dir.path(), "empty.json", r#"{"configs": []}"#);
    let o = run_with("verify", &s, dir.path());
    assert_eq!(code(&o), EXIT_OK);
    assert_eq!(fs::read_to_string(dir.path().join("sweep.csv")).unwrap().lines().count(), 1);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let s = spec(dir.path(), "sweep.json", SMALL_SWEEP);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(code(&run_with("verify", &s, &a)), EXIT_OK);
    assert_eq!(code(&run_with("verify", &s, &b)), EXIT_OK);
    let mut args = vec!["verify", "-s", s.to_str().unwrap(), "-o", c.to_str().unwrap(), "--seed", "9"];
    assert_eq!(code(&etaquot(&args)), EXIT_OK);
    let read = |d: &Path| fs::read(d.join("sweep.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));

    let r = spec(
        dir.path(),
        "radial.json",
        &format!(r#"{{"psi": "{DESK_PSI}", "r1": 1, "r2": 3, "start": "1.6 + 0.15*x3", "solver": {{"n_lat": 8, "n_lon": 16}}}}"#),
    );
    args = vec!["radial-solve", "-s", r.to_str().unwrap(), "-o"];
    let (x, y) = (dir.path().join("x"), dir.path().join("y"));
    for d in [&x, &y] {
        let mut full = args.clone();
        full.push(d.to_str().unwrap());
        assert_eq!(code(&etaquot(&full)), EXIT_OK);
    }
    for f in ["radial.csv", "history.csv", "barrier.csv"] {
        assert_eq!(fs::read(x.join(f)).unwrap(), fs::read(y.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn negative_right_hand_side_is_a_violation() {
    let dir = TempDir::new().unwrap();
    let s = spec(
        dir.path(),
        "solve.json",
        r#"{"domain": {"kind": "ball", "center": [0, 0], "radius": 1}, "k": 1, "l": 0, "rhs": "-1", "boundary": "0", "points": 9}"#,
    );
    assert_eq!(code(&run_with("solve", &s, dir.path())), EXIT_VIOLATION);
}

#[test]
fn solve_writes_solution_and_monitors() {
    let dir = TempDir::new().unwrap();
    let s = spec(
        dir.path(),
        "solve.json",
        r#"{"domain": {"kind": "ball", "center": [0, 0, 0], "radius": 1}, "k": 2, "l": 1, "rhs": "1 + 0.2*x1^2", "boundary": "0"}"#,
    );
    let o = etaquot(&["solve", "-s", s.to_str().unwrap(), "-o", dir.path().to_str().unwrap(), "--grid", "9", "--beta", "3"]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let monitors = fs::read_to_string(dir.path().join("monitors.csv")).unwrap();
    assert!(monitors.lines().nth(1).unwrap().starts_with("3.0,"));
    assert!(fs::read_to_string(dir.path().join("solution.csv")).unwrap().starts_with("x1,x2,x3,kind,u\n"));
    assert!(fs::read_to_string(dir.path().join("iterations.csv")).unwrap().lines().count() >= 2);

    // one Newton step is not enough from the bowl
    let o = etaquot(&["solve", "-s", s.to_str().unwrap(), "-o", dir.path().to_str().unwrap(), "--tol", "1e-30"]);
    assert_eq!(code(&o), EXIT_FAILED);
}

#[test]
fn barrier_example_has_three_nonnegative_margins() {
    let dir = TempDir::new().unwrap();
    let s = spec(dir.path(), "barrier.json", &format!(r#"{{"warp": "r", "psi": "{DESK_PSI}", "r1": 1, "r2": 3}}"#));
    let o = run_with("barrier", &s, dir.path());
    assert_eq!(code(&o), EXIT_OK);
    let csv = fs::read_to_string(dir.path().join("barrier.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let margin: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!(margin >= 0.0, "{row}");
    }

    let bad = spec(dir.path(), "bad.json", r#"{"psi": "1", "r1": 1, "r2": 2}"#);
    assert_eq!(code(&run_with("barrier", &bad, dir.path())), EXIT_VIOLATION);
    let bad = spec(dir.path(), "bad.json", &format!(r#"{{"psi": "{DESK_PSI}", "r1": 1, "r2": 3}}"#));
    let o = run_with("radial-solve", &bad, dir.path());
    assert_eq!(code(&o), EXIT_OK);
}

#[test]
fn radial_nonconvergence_exits_one() {
    let dir = TempDir::new().unwrap();
    let s = spec(
        dir.path(),
        "radial.json",
        &format!(r#"{{"psi": "{DESK_PSI}", "r1": 1, "r2": 3, "solver": {{"max_iter": 1, "initial": 1.2}}}}"#),
    );
    let o = etaquot(&["radial-solve", "-s", s.to_str().unwrap(), "-o", dir.path().to_str().unwrap(), "--grid", "8,16"]);
    assert_eq!(code(&o), EXIT_FAILED);
    assert_eq!(fs::read_to_string(dir.path().join("history.csv")).unwrap().lines().count(), 3);
}

#[test]
fn geometry_for_both_surface_kinds() {
    let dir = TempDir::new().unwrap();
    let radial = spec(
        dir.path(),
        "radial.json",
        r#"{"surface": "radial", "warp": "sinh(r)", "r": "1.2", "grid": [8, 16], "k": 2, "l": 1}"#,
    );
    assert_eq!(code(&run_with("geometry", &radial, dir.path())), EXIT_OK);
    let q = fs::read_to_string(dir.path().join("quotient.csv")).unwrap();
    // geodesic sphere of radius 1.2: κ = η = coth(1.2) twice, so σ₂/σ₁ = κ/2
    let kappa = 1.0 / 1.2f64.tanh();
    for line in q.lines().skip(1) {
        let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((v - 0.5 * kappa).abs() < 1e-10, "{line}");
    }

    let graph = spec(
        dir.path(),
        "graph.json",
        r#"{"surface": "graph", "domain": {"kind": "box", "lo": [-1, -1], "hi": [1, 1]}, "u": "(x1^2 + x2^2)/2", "points": 17, "k": 1, "l": 0}"#,
    );
    let out = dir.path().join("graph");
    assert_eq!(code(&run_with("geometry", &graph, &out)), EXIT_OK);
    let ids = fs::read_to_string(out.join("identities.csv")).unwrap();
    for name in ["codazzi", "commutator", "normal_component"] {
        assert!(ids.contains(name), "{ids}");
    }
}

#[test]
fn probe_defaults_to_the_degenerate_family() {
    let dir = TempDir::new().unwrap();
    let o = etaquot(&["probe-kn", "-o", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_OK);
    let csv = fs::read_to_string(dir.path().join("probe.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.lines().nth(1).unwrap().starts_with("3,3,2,0.1,"));
}

#[test]
fn input_errors_exit_three() {
    let dir = TempDir::new().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(code(&etaquot(&["solve", "-o", d])), EXIT_INPUT);
    assert_eq!(code(&etaquot(&["frobnicate"])), EXIT_INPUT);
    assert_eq!(code(&etaquot(&["verify", "--seed", "minus one"])), EXIT_INPUT);
    let bad = spec(dir.path(), "bad.json", "{not json");
    assert_eq!(code(&run_with("verify", &bad, dir.path())), EXIT_INPUT);
    let bad = spec(dir.path(), "bad.json", r#"{"psi": "sin(", "r1": 1, "r2": 3}"#);
    assert_eq!(code(&run_with("barrier", &bad, dir.path())), EXIT_INPUT);
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&run_with("barrier", &missing, dir.path())), EXIT_INPUT);
    assert_eq!(code(&etaquot(&["--help"])), EXIT_OK);
}

#[test]
fn every_run_ends_in_a_known_code() {
    let dir = TempDir::new().unwrap();
    let d = dir.path().to_str().unwrap();
    let cases: [&[&str]; 6] = [
        &["etaquot"],
        &["etaquot", "geometry", "-o", d],
        &["etaquot", "probe-kn", "-o", d, "--grid", "3"],
        &["etaquot", "radial-solve", "-o", d],
        &["etaquot", "verify", "-s", "/nonexistent/spec.json"],
        &["etaquot", "--version"],
    ];
    for argv in cases {
        assert!((0..=3).contains(&run(argv.iter().copied())), "{argv:?}");
    }
    assert_eq!(exit_code(&etaquot::Error::NonConvergence("x".into())), EXIT_FAILED);
    assert_eq!(exit_code(&etaquot::Error::Barrier("x".into())), EXIT_VIOLATION);
    assert_eq!(exit_code(&etaquot::Error::Admissibility { index: 2, value: -1.0 }), EXIT_VIOLATION);
}
