use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_matern-bvm"))
}

#[test]
fn bad_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "d = 1\nbogus_key = 3\n").unwrap();
    let out = bin().args(["table1", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let missing = bin().args(["table1", "--config", "/nonexistent/x.cfg"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn kl_check_prints_table() {
    let out = bin().args(["kl-check", "--sizes", "100,200"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,r_n,r_limit,gap"));
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first[0], 100.0);
    assert!((first[1] - 0.4356215273).abs() < 1e-8);
    assert!(first[3] > 0.0);
}

#[test]
fn small_table_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "sizes = 20, 30\nreps = 2\nn_samples = 200\nn_burnin = 50\nn_test_points = 20\n").unwrap();
    let out = bin()
        .args(["table3", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .args(["--seed", "5"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("table3.csv")).unwrap();
    assert!(table.starts_with("n,replications,retries,e_theta_mean"));
    assert_eq!(table.lines().count(), 3);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("table3_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 5);
    assert!(manifest["outputs"].as_array().unwrap().len() >= 2);
}

#[test]
fn simulate_writes_dataset_and_chain() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["simulate", "--size", "40", "--reps", "1", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let data = fs::read_to_string(dir.path().join("dataset.csv")).unwrap();
    assert_eq!(data.lines().count(), 41);
    let chain = fs::read_to_string(dir.path().join("chain.csv")).unwrap();
    assert!(chain.starts_with("iter,theta,alpha"));
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("chain.json")).unwrap()).unwrap();
    let rate = side["acceptance_rate"].as_f64().unwrap();
    assert!(rate > 0.0 && rate < 1.0);
}

#[test]
fn fast_ou_and_dense_conflict() {
    let out = bin().args(["table1", "--fast-ou", "--dense"]).output().unwrap();
    assert!(!out.status.success());
}
