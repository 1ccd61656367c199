use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lcp_pqn::instances::{save_instance, LcpInstance};
use lcp_pqn::DenseMatrix;

fn lcp_pqn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcp-pqn"))
        .args(args)
        .env("LCP_PQN_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn generate_then_solve() {
    let dir = tempfile::tempdir().unwrap();
    let out = lcp_pqn(&[
        "generate", "--m", "3", "--count", "2", "--seed", "4", "--model", "rpy", "--lowfi", "perturb-c:0.05",
        "--out", p(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let inst = dir.path().join("inst_0000.lcp.json");
    assert!(inst.exists() && dir.path().join("inst_0001.lcp.json").exists());
    for solver in ["mono_pqn", "bi_pqn", "bb_pgd", "min_map"] {
        let out = lcp_pqn(&["solve", "--instance", p(&inst), "--solver", solver]);
        assert_eq!(out.status.code(), Some(0), "{solver}");
        let v = json(&out);
        assert_eq!(v["converged"], true);
        assert_eq!(v["instance"], "inst_0000");
    }
}

#[test]
fn nonconvergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("ill.lcp.json");
    let a = DenseMatrix::from_diagonal(&[1.0, 1000.0]);
    save_instance(&LcpInstance::from_dense(a, vec![-1.0, -1.0]).unwrap(), &inst).unwrap();
    let out = lcp_pqn(&["solve", "--instance", p(&inst), "--solver", "pgd", "--k-max", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out)["converged"], false);
}

#[test]
fn bad_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.lcp.json");
    fs::write(&bad, r#"{"version": 1, "n": 1}"#).unwrap();
    let out = lcp_pqn(&["solve", "--instance", p(&bad), "--solver", "mono_pqn"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`b`"));
    assert_eq!(lcp_pqn(&["solve", "--solver", "nope"]).status.code(), Some(1));
}

#[test]
fn trivial_suite_costs_one_mvp() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("suite");
    fs::create_dir(&suite).unwrap();
    let inst = LcpInstance::from_dense(DenseMatrix::identity(2), vec![1.0, 1.0]).unwrap();
    save_instance(&inst, suite.join("inst_0000.lcp.json")).unwrap();
    let (csv, js) = (dir.path().join("runs.csv"), dir.path().join("summary.json"));
    let out = lcp_pqn(&[
        "bench", "--suite", p(&suite), "--solvers", "mono_pqn,bb_pgd", "--csv", p(&csv), "--json", p(&js),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(&js).unwrap()).unwrap();
    for s in summary["solvers"].as_array().unwrap() {
        assert_eq!(s["e_mvps"]["median"], 1.0, "{}", s["solver"]);
    }
    let rows = fs::read_to_string(&csv).unwrap();
    assert_eq!(rows.lines().count(), 3);
}

#[test]
fn cofa_accepts_an_unperturbed_copy() {
    let dir = tempfile::tempdir().unwrap();
    let out = lcp_pqn(&["generate", "--m", "3", "--seed", "2", "--lowfi", "perturb:0", "--out", p(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = lcp_pqn(&["cofa", "--instance", p(&dir.path().join("inst_0000.lcp.json"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["neighborhood_ok"], true);
    assert_eq!(v["delta"], 0.0);
    let (c, lo, hi) = (v["c_est"].as_f64().unwrap(), v["bracket"][0].as_f64().unwrap(), v["bracket"][1].as_f64().unwrap());
    assert!(lo <= c && c <= hi + 1e-8);
}
