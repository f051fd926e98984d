use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn bpair(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bpair")).args(args).current_dir(cwd).output().expect("bpair runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn model(name: &str) -> String {
    root().join("models").join(format!("{name}.toml")).display().to_string()
}

fn scenario(name: &str) -> String {
    root().join("scenarios").join(format!("{name}.toml")).display().to_string()
}

/// A pendulum bundle in a fresh directory.
fn pendulum_bundle() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = bpair(&["synth", &model("pendulum"), "-o", "p.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

#[test]
fn synth_reports_design_quantities() {
    let dir = tempfile::tempdir().unwrap();
    let o = bpair(&["synth", &model("pendulum"), "--eps", "0.8", "--directions", "1", "-o", "p.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    for key in ["eps        0.8", "logdet Y", "r_e", "rho[1]", "generators 2 + 0"] {
        assert!(out.contains(key), "missing `{key}` in\n{out}");
    }
    assert!(!out.contains("rho[2]"));
    let b: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("p.json")).unwrap()).unwrap();
    assert_eq!(b["format"], "barrier-pair-bundle");
    assert_eq!(b["metadata"]["config"]["directions"], 1);
}

#[test]
fn synth_rejects_eps_at_least_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = bpair(&["synth", &model("pendulum"), "--eps", "1.5", "-o", "p.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("eps must lie in (0, 1)"));
    assert!(!dir.path().join("p.json").exists());
}

#[test]
fn synth_rejects_wrong_mu_p_length() {
    let dir = tempfile::tempdir().unwrap();
    let o = bpair(&["synth", &model("pendulum"), "--mu-p", "0.1,0.2,0.3,0.4,0.5,0.6,0.7", "-o", "p.json"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    assert!(!dir.path().join("p.json").exists());
}

#[test]
fn supervised_pendulum_is_safe_and_reproducible() {
    let dir = pendulum_bundle();
    let p = dir.path();
    let o = bpair(&["simulate", "p.json", &scenario("pendulum"), "-o", "a.csv"], p);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(bpair(&["simulate", "p.json", &scenario("pendulum"), "-o", "b.csv"], p).status.success());
    let a = std::fs::read(p.join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(p.join("b.csv")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 10002);

    let side: Value = serde_json::from_str(&std::fs::read_to_string(p.join("a.json")).unwrap()).unwrap();
    assert_eq!(side["safe"], true);
    assert_eq!(side["scenario_hash"].as_str().unwrap().len(), 64);
    assert!(side["tool"].as_str().unwrap().starts_with("barrier-pair "));
    let peak: f64 = stdout(&o)
        .lines()
        .find(|l| l.starts_with("constraint 1"))
        .and_then(|l| l.rsplit(' ').next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(peak <= 1.0);
}

#[test]
fn baseline_flag_exits_nonzero_with_summary() {
    let dir = pendulum_bundle();
    let o = bpair(&["simulate", "p.json", &scenario("pendulum"), "--baseline", "-o", "base.csv"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("safety violation"));
    let side: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("base.json")).unwrap()).unwrap();
    assert_eq!(side["safe"], false);
    assert!(side["summary"]["state_violations"].as_u64().unwrap() > 0);
}

#[test]
fn flags_override_the_scenario() {
    let dir = pendulum_bundle();
    let p = dir.path();
    let o = bpair(
        &["simulate", "p.json", &scenario("pendulum"), "--dt", "0.002", "--horizon", "1", "--eps-lower", "0.9", "--eps-upper", "0.95", "-o", "t.csv"],
        p,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(p.join("t.csv")).unwrap();
    assert_eq!(csv.lines().count(), 502);
    let side: Value = serde_json::from_str(&std::fs::read_to_string(p.join("t.json")).unwrap()).unwrap();
    assert_eq!(side["eps_lower"], 0.9);
    assert_eq!(side["eps_upper"], 0.95);
    let base: Value = serde_json::from_str(&{
        bpair(&["simulate", "p.json", &scenario("pendulum"), "--dt", "0.002", "--horizon", "1", "-o", "u.csv"], p);
        std::fs::read_to_string(p.join("u.json")).unwrap()
    })
    .unwrap();
    assert_ne!(side["scenario_hash"], base["scenario_hash"]);
}

#[test]
fn zero_horizon_writes_header_only() {
    let dir = pendulum_bundle();
    let o = bpair(&["simulate", "p.json", &scenario("pendulum"), "--horizon", "0", "-o", "z.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("z.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    assert!(csv.starts_with("t,xp1,xp2,xk1"));
}

#[test]
fn scenario_for_another_plant_is_rejected() {
    let dir = pendulum_bundle();
    let o = bpair(&["simulate", "p.json", &scenario("springmass"), "-o", "s.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not fit"), "{}", stderr(&o));
}

#[test]
fn verify_writes_machine_readable_report() {
    let dir = pendulum_bundle();
    let o = bpair(&["verify", "p.json", "--samples", "50", "--seed", "3", "-o", "v.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("v.json")).unwrap()).unwrap();
    assert_eq!(r["seed"], 3);
    let names: Vec<&str> = r["properties"].as_array().unwrap().iter().map(|p| p["name"].as_str().unwrap()).collect();
    for n in ["model-hash", "certificate", "sublevel", "decrease", "bound-soundness"] {
        assert!(names.contains(&n), "{names:?}");
    }
    assert!(r["properties"].as_array().unwrap().iter().all(|p| p["passed"] == true));
}

#[test]
fn verify_without_samples_runs_deterministic_checks_only() {
    let dir = pendulum_bundle();
    let o = bpair(&["verify", "p.json", "--samples", "0"], dir.path());
    assert!(o.status.success());
    let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let names: Vec<&str> = r["properties"].as_array().unwrap().iter().map(|p| p["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["model-hash", "certificate", "partition", "composite", "estimator"]);
}

#[test]
fn perturbed_p_fails_certificate_recheck() {
    let dir = pendulum_bundle();
    let path = dir.path().join("p.json");
    let mut b: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let data = b["pair"]["p"]["data"].as_array_mut().unwrap();
    let n = data.len();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = data[i][j].as_f64().unwrap();
                data[i][j] = Value::from(v * 1.1);
            }
        }
    }
    std::fs::write(&path, serde_json::to_string(&b).unwrap()).unwrap();
    let o = bpair(&["verify", "p.json", "--samples", "0"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let failed: Vec<&str> = r["properties"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|p| p["passed"] == false)
        .map(|p| p["name"].as_str().unwrap())
        .collect();
    assert!(failed.contains(&"certificate") || failed.contains(&"partition"), "{failed:?}");
    // Loading for simulation re-verifies and refuses.
    let o = bpair(&["simulate", "p.json", &scenario("pendulum"), "-o", "x.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compose_rebuilds_generators() {
    let dir = pendulum_bundle();
    let o = bpair(&["compose", "p.json", "--directions", "1", "--interp", "3", "-o", "q.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let b: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("q.json")).unwrap()).unwrap();
    let gens = b["composite"]["generators"].as_array().unwrap().len();
    let dropped = b["metadata"]["dropped"].as_array().unwrap().len();
    assert_eq!(gens + dropped, 2);
    assert_eq!(b["composite"]["pool"].as_array().unwrap().len(), 3);
    assert!(bpair(&["verify", "q.json", "--samples", "0"], dir.path()).status.success());
}

#[test]
fn report_splits_trace_into_panels() {
    let dir = pendulum_bundle();
    let p = dir.path();
    assert!(bpair(&["simulate", "p.json", &scenario("pendulum"), "--horizon", "2", "-o", "run.csv"], p).status.success());
    let o = bpair(&["report", "run.csv", "-o", "fig"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    let cons = std::fs::read_to_string(p.join("fig/constraints.csv")).unwrap();
    assert!(cons.starts_with("t,s1,s2\n"));
    assert_eq!(cons.lines().count(), 2002);
    let bar = std::fs::read_to_string(p.join("fig/barrier.csv")).unwrap();
    assert!(bar.starts_with("t,B_true,B_bar,r_cl,r_p,r_e,eps_lower,eps_upper\n"));
    let inputs = std::fs::read_to_string(p.join("fig/inputs.csv")).unwrap();
    assert!(inputs.starts_with("t,u1,u_bar1,mode\n"));
    // s2 is the rate channel, scaled so its limit is one.
    for line in cons.lines().skip(1) {
        let s: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert!(s[1].abs() <= 1.0 && s[2].abs() <= 1.0);
    }
}

#[test]
fn report_needs_the_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("t.csv"), "t,xp1\n0,0\n").unwrap();
    let o = bpair(&["report", "t.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("t.json"));
}

#[test]
fn missing_model_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = bpair(&["synth", "nope.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.toml"));
}
