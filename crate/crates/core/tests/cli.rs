use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mas-abstract"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn discretize_general_case_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &[
            "discretize",
            "--lambda",
            "0.3",
            "--mu",
            "0",
            "--M",
            "15",
            "--vmax",
            "5",
            "--L",
            "10",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&dir.path().join("discretization.json"));
    assert_eq!(v["chosen"]["case"], "I");
    let cap = v["d_max_cap"].as_f64().unwrap();
    // (1 - 0.3)^2 * 25 / 600
    assert!((cap - 0.0204167).abs() < 1e-7, "{cap}");
    let manifest = read_json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["command"], "discretize");
    assert_eq!(manifest["files"][0], "discretization.json");
}

#[test]
fn discretize_example_mode_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["discretize", "--example-mode", "--lambda", "0.3"]);
    assert!(o.status.success());
    let v = read_json(&dir.path().join("discretization.json"));
    assert_eq!(v["chosen"]["NT"], 26);
    let side = v["chosen"]["grid"]["side"].as_f64().unwrap();
    assert!((side - 0.172414).abs() < 1e-6);
    assert_eq!(v["chosen"]["grid"]["counts"], serde_json::json!([116, 116]));
}

#[test]
fn malformed_scenario_reports_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(
        &path,
        r#"{"network": {"kind": "preset", "name": "four-agent-example"}, "lambda": 0.3, "horizon": "long"}"#,
    )
    .unwrap();
    let o = run(
        &dir.path().join("out"),
        &["simulate", "--scenario", path.to_str().unwrap()],
    );
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("horizon"), "{err}");
}

#[test]
fn disconnected_initial_states_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("far.json");
    fs::write(
        &path,
        r#"{"network": {"kind": "preset", "name": "four-agent-example"}, "lambda": 0.3,
            "initial_states": [[5, -3], [-5, 3], [0, 6], [-4, 6]]}"#,
    )
    .unwrap();
    let o = run(
        &dir.path().join("out"),
        &["simulate", "--scenario", path.to_str().unwrap()],
    );
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("exceeds rho"));
}

#[test]
fn simulate_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = run(
            d,
            &["--seed", "5", "simulate", "--chooser", "random", "--trace-controller"],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in [
        "summary.json",
        "trace.csv",
        "controller.csv",
        "trajectories.svg",
        "manifest.json",
    ] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let s = read_json(&a.join("summary.json"));
    assert_eq!(s["valid"], true);
    assert_eq!(s["steps"], 26);
}

#[test]
fn verify_negative_control_fails_some_trials() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &[
            "--seed",
            "2",
            "verify",
            "--configs",
            "30",
            "--dt-factor",
            "3",
            "--property-samples",
            "32",
        ],
    );
    assert!(o.status.success());
    let v = read_json(&dir.path().join("verdict.json"));
    let trials = v["trials"].as_array().unwrap().len();
    assert_eq!(trials, 60);
    assert!(v["passed"].as_u64().unwrap() < trials as u64);
}

#[test]
fn abstract_exports_agree() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["abstract", "--agent", "2", "--auto-distance", "0.2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read_json(&dir.path().join("summary.json"));
    let edges = summary["edges"].as_u64().unwrap() as usize;
    let csv = fs::read_to_string(dir.path().join("ts.csv")).unwrap();
    assert_eq!(csv.lines().count(), edges + 1);
    let dot = fs::read_to_string(dir.path().join("ts.dot")).unwrap();
    let parsed = mas_abstraction::abstraction::parse_dot(&dot).unwrap();
    assert_eq!(parsed.len(), edges);
}

#[test]
fn reach_with_explicit_trace() {
    let dir = tempfile::tempdir().unwrap();
    // agent 0 follows agent 1; pin agent 1 to its initial cell for three steps
    let probe = run(&dir.path().join("p"), &["reach", "--agent", "1", "--steps", "1"]);
    assert!(probe.status.success(), "{}", String::from_utf8_lossy(&probe.stderr));
    let cell = read_json(&dir.path().join("p/reach.json"))["steps"][0][0]
        .as_u64()
        .unwrap();
    let trace = dir.path().join("trace.json");
    fs::write(&trace, format!("[[[{cell}]], [[{cell}]], [[{cell}]]]")).unwrap();
    let o = run(
        &dir.path().join("r"),
        &["reach", "--agent", "0", "--trace", trace.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&dir.path().join("r/reach.json"));
    let sizes: Vec<u64> = v["sizes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_u64().unwrap())
        .collect();
    assert_eq!(sizes.len(), 4);
    assert_eq!(sizes[0], 1);
    assert!(sizes.iter().all(|&s| s >= 1));
    assert!(fs::read_to_string(dir.path().join("r/reach.svg"))
        .unwrap()
        .starts_with("<svg"));
}
