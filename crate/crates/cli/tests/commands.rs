use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

use hybrid_observer_cli::{cmd_verify, CertificateFile, RunReport, Status, OUT_ENV};

/// Two decoupled modes, each seen by one agent.
fn toy() -> Value {
    json!({
        "schema_version": 1,
        "name": "toy",
        "plant": {
            "a": [[-0.3, 0.0], [0.0, 0.1]],
            "channels": [[[1.0, 0.0]], [[0.0, 1.0]]],
            "x0": [1.0, -2.0]
        },
        "rates": { "lambda": 1.0, "lambda_bar": 2.0 },
        "timing": { "period": 1.0, "q": "auto", "seed": 3 },
        "graphs": { "pair": [[1, 2], [2, 1]] },
        "schedule": { "segments": [[0.0, "pair"]] },
        "mode": "sync",
        "averaging": "straight",
        "horizon": 5.0,
        "initial": { "w": [[0.5], [0.5]], "xhat": [[0.0, 0.0], [3.0, 1.0]] },
        "output": { "sample_step": 0.05 }
    })
}

fn write(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybrid-observer")).args(args).env_remove(OUT_ENV).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn design_into(scenario: &Path, out: &Path) -> PathBuf {
    let o = cli(&["design", s(scenario), "--out", s(out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    out.join("certificate.json")
}

#[test]
fn design_simulate_verify_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write(tmp.path(), "toy.json", &toy());
    let out = tmp.path().join("out");
    let cert_path = design_into(&scenario, &out);
    let cert = CertificateFile::load(&cert_path).unwrap();
    assert!(cert.q_certified);
    assert_eq!(cert.q, cert.q_straight);

    let o = cli(&["simulate", s(&scenario), "--cert", s(&cert_path), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: RunReport = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.bound_violations, 0);
    assert_eq!(report.bound_checked_events, report.events);
    for f in &report.files {
        assert_eq!(std::fs::metadata(out.join(&f.name)).unwrap().len(), f.bytes);
    }
    let events = std::fs::read_to_string(out.join("events.csv")).unwrap();
    assert!(events.starts_with("s,t_s,e_norm,bound_theorem,"));

    let o = cli(&["verify", s(&scenario)]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert!(text.contains("verify: pass"));
}

#[test]
fn unobservable_scenario_exits_infeasible() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = toy();
    v["plant"]["channels"] = json!([[[1.0, 0.0]], [[1.0, 0.0]]]);
    let scenario = write(tmp.path(), "blind.json", &v);
    let o = cli(&["design", s(&scenario), "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("observable"));
    assert!(!tmp.path().join("certificate.json").exists());
}

#[test]
fn certificate_for_another_scenario_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write(tmp.path(), "toy.json", &toy());
    let cert = design_into(&scenario, tmp.path());
    let mut v = toy();
    v["plant"]["x0"] = json!([1.0, -2.5]);
    let edited = write(tmp.path(), "edited.json", &v);
    let o = cli(&["simulate", s(&edited), "--cert", s(&cert), "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hashes to"));
}

#[test]
fn exact_start_gives_zero_error_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = toy();
    v["initial"] = json!({ "w": [[1.0], [-2.0]], "xhat": [[1.0, -2.0], [1.0, -2.0]] });
    let scenario = write(tmp.path(), "exact.json", &v);
    let cert = design_into(&scenario, tmp.path());
    let o = cli(&["simulate", s(&scenario), "--cert", s(&cert), "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(0));
    let trace = std::fs::read_to_string(tmp.path().join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let err_cols: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with("err")).collect();
    assert_eq!(err_cols.len(), 2);
    for line in lines {
        let cells: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        for &c in &err_cols {
            assert!(cells[c].abs() <= 1e-12, "{line}");
        }
    }
}

#[test]
fn output_env_var_overrides_scenario_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = toy();
    let elsewhere = tmp.path().join("from_scenario");
    v["output"]["dir"] = json!(s(&elsewhere));
    let scenario = write(tmp.path(), "toy.json", &v);
    let target = tmp.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_hybrid-observer"))
        .args(["design", s(&scenario)])
        .env(OUT_ENV, &target)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(target.join("certificate.json").exists());
    assert!(!elsewhere.exists());
}

#[test]
fn halved_q_is_flagged_but_still_matches_the_recursion() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write(tmp.path(), "toy.json", &toy());
    let q = CertificateFile::load(&design_into(&scenario, tmp.path())).unwrap().q;
    assert!(q >= 2);
    let mut v = toy();
    v["timing"]["q"] = json!(q / 2);
    let halved = write(tmp.path(), "halved.json", &v);
    let (outcome, report) = cmd_verify(&halved).unwrap();
    assert!(!report.certificate.q_certified);
    assert_eq!(report.get("iteration-count").unwrap().status, Status::NotCertified, "{}", outcome.text);
    assert_eq!(report.get("oracle-equivalence").unwrap().status, Status::Pass, "{}", outcome.text);
    assert_eq!(outcome.code, 0, "{}", outcome.text);
}
