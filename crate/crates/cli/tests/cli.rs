use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn gign(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gign"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("GIGN_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn invariant_reports_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("erlang_a.toml");
    let out = gign(&["invariant", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&dir.path().join("invariant.json"));
    assert!((v["x_star"].as_f64().unwrap() - 2.0).abs() < 1e-8);
    assert_eq!(v["regime"], "critical_or_super");
    assert_eq!(v["unique"], true);
    assert_eq!(v["seed"], 20240601);
    assert_eq!(v["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn flat_patience_is_not_unique() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("flat_patience.toml");
    let out = gign(&["invariant", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v = json(&dir.path().join("invariant.json"));
    assert_eq!(v["unique"], false);
    assert!(v.get("x_star").is_none());
    assert!((v["b_l"].as_f64().unwrap() - 2.5).abs() < 1e-6);
    assert!((v["b_r"].as_f64().unwrap() - 3.5).abs() < 1e-6);
}

#[test]
fn fluid_erlang_example_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("erlang_fluid.toml");
    let out = gign(&["fluid", "--config", cfg.to_str().unwrap(), "--quiet"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let csv = std::fs::read_to_string(dir.path().join("fluid.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# config_sha256="));
    assert_eq!(lines.next().unwrap(), "t,X,Q,B,K,R,eta_mass,hs_nu");
    let last: Vec<f64> = csv.lines().last().unwrap().split(',').map(|f| f.parse().unwrap()).collect();
    assert!((last[0] - 10.0).abs() < 1e-9);
    assert!((last[2] - 0.25).abs() < 1e-2, "Q = {}", last[2]);
}

#[test]
fn simulate_is_audited_and_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = config("mixed.toml");
    let args = ["simulate", "--config", cfg.to_str().unwrap(), "--seed", "99"];
    let out = gign(&args, a.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = Command::new(env!("CARGO_BIN_EXE_gign"))
        .args(args)
        .args(["--threads", "1"])
        .env("GIGN_OUT_DIR", b.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    for name in ["simulate.json", "trajectory.csv", "nu_hist.csv", "eta_hist.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
    let v = json(&a.path().join("simulate.json"));
    assert_eq!(v["seed"], 99);
    assert_eq!(v["total_violations"], 0);
    let traj = std::fs::read_to_string(a.path().join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().nth(1).unwrap(), "time,event_kind,X,nu_mass,eta_mass,Q,R,S,D,K,chi");
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(
        &bad,
        "n_servers = 3\nno_abandonment = true\nservice = { kind = \"exponential\", rate = 1.0 }\npatience = { kind = \"exponential\", rate = 1.0 }\n[arrivals]\nlambda_bar = 1.0\n",
    )
    .unwrap();
    let out = gign(&["simulate", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("patience"));
    let out = gign(&["simulate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let missing = dir.path().join("nope.toml");
    let out = gign(&["fluid", "--config", missing.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn invariant_without_abandonment_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("erlang_fluid.toml");
    let out = gign(&["invariant", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn interchange_runs_without_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = gign(&["interchange"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&dir.path().join("interchange.json"));
    assert_eq!(v["limits_differ"], true);
    assert_eq!(v["rows"].as_array().unwrap().len(), 3);
}
