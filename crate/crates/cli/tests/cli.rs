//! Runs the `qgs` binary on the bundled configurations.

use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn qgs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qgs")).args(args).env("QGS_THREADS", "2").output().expect("spawn qgs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn eigs_writes_csv_with_interval_levels() {
    let g = config("interval_step.json");
    let o = qgs(&["eigs", "--graph", g.to_str().unwrap(), "--emax", "50", "--grid", "400"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("index,E,multiplicity,residual"));
    let energies: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    // Below the step both edges behave as one Dirichlet interval with an evanescent tail.
    assert_eq!(energies.len(), 2);
    assert!(energies.windows(2).all(|w| w[0] < w[1]));
    assert!(energies[0] > 0.0 && energies[0] < std::f64::consts::PI.powi(2));
}

#[test]
fn count_json_carries_metadata_and_consistent_columns() {
    let g = config("star3.json");
    let o = qgs(&["count", "--graph", g.to_str().unwrap(), "--emax", "60", "--grid", "120", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    let meta = &doc["meta"];
    assert_eq!(meta["command"], "count");
    assert_eq!(meta["mode"], "reduced");
    let digest = hex::encode(Sha256::digest(std::fs::read(&g).unwrap()));
    assert_eq!(meta["graph_sha256"], digest.as_str());
    let columns: Vec<&str> = doc["columns"].as_array().unwrap().iter().map(|c| c.as_str().unwrap()).collect();
    let col = |name: &str| columns.iter().position(|c| *c == name).unwrap();
    let rows = doc["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 120);
    for r in rows {
        let x = |name: &str| r[col(name)].as_f64().unwrap();
        // The default JSON float parser is accurate to about one ulp.
        assert!((x("N_total") - (x("N_mean") + x("N_osc"))).abs() < 1e-14);
    }
}

#[test]
fn out_flag_writes_file() {
    let g = config("interval_step.json");
    let dir = std::env::temp_dir().join(format!("qgs-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("trace.csv");
    let o = qgs(&["trace", "--graph", g.to_str().unwrap(), "--emax", "30", "--grid", "10", "--out", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("E,re_xi,im_xi,abs_xi,re_xi_red,im_xi_red,abs_xi_red,N_exact"));
    assert_eq!(text.lines().count(), 11);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn orbits_match_traces_and_report_budget() {
    let g = config("star3.json");
    // Directed-edge orbits with Dirichlet leaves: i> i< and i> i< j> j< for i < j.
    let o = qgs(&["orbits", "--graph", g.to_str().unwrap(), "--nmax", "4", "--energy", "50"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let lengths: Vec<usize> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(lengths, vec![2, 2, 2, 4, 4, 4]);
    let over = qgs(&["orbits", "--graph", g.to_str().unwrap(), "--nmax", "30", "--energy", "50"]);
    assert_eq!(over.status.code(), Some(3));
}

#[test]
fn verify_passes_on_configs_and_fuzzed_graphs() {
    let g = config("star3_leg055.json");
    let o = qgs(&["verify", "--graph", g.to_str().unwrap(), "--emax", "200", "--grid", "40", "--fuzz", "5", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn bad_input_exits_with_error() {
    assert_eq!(qgs(&["eigs", "--graph", "/nonexistent/graph.json"]).status.code(), Some(1));
    let g = config("interval_step.json");
    let o = qgs(&["count", "--graph", g.to_str().unwrap(), "--mode", "fixed-partition"]);
    assert_eq!(o.status.code(), Some(1));
    let o = qgs(&["eigs", "--graph", g.to_str().unwrap(), "--emin", "50", "--emax", "10"]);
    assert_eq!(o.status.code(), Some(1));
}
