use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"
seed = 9
[system]
family = "heisenberg"
num_sites = 3
[dataset]
num_states = 3
num_bases = 6
shots = 20
[model]
hidden = [8]
[train]
warmup_steps = 4
phase1_steps = 8
phase2_steps = 4
[train.integrator]
dt = 0.05
[harness]
num_trials = 2
[benchmark.curve]
t_max = 5.0
points = 8
num_test_states = 2
allow_reuse = true
[benchmark]
fit_window = [0.5, 5.0]
[sweep]
k_values = [2, 4]
[landscape.grid]
resolution = 5
"#;

fn hamlearn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hamlearn"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(path: &Path) -> (String, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().to_string();
    let rows = lines
        .map(|l| l.split(',').map(|c| c.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn dry_run_reports_default_cardinality() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hamlearn(&["gen-data", "--dry-run", "--out", s(&tmp.path().join("d"))]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("records: 500000"));
}

#[test]
fn default_training_recovers_heisenberg() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("train");
    let out = hamlearn(&["train", "--out", s(&dir)]);
    let result = json(&dir.join("result.json"));
    let eps = result["relative_error"].as_f64().unwrap();
    assert!(eps < 0.1, "relative error {eps}");
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn artifacts_follow_their_schemas() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let gen = tmp.path().join("gen");
    assert!(hamlearn(&["gen-data", "--config", &cfg, "--out", s(&gen)])
        .status
        .success());
    let data = gen.join("dataset.txt");
    let truth = gen.join("ground_truth.json");
    let header: Value = serde_json::from_str(fs::read_to_string(&data).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(header["num_records"].as_u64(), Some(3 * 6 * 5 * 20));
    assert!(header["config_hash"].is_string());
    assert_eq!(json(&truth)["params"].as_array().unwrap().len(), 6);

    let input = ["--data", s(&data), "--truth", s(&truth)];

    let bench = tmp.path().join("bench");
    let mut args = vec!["benchmark", "--config", &cfg, "--out", s(&bench)];
    args.extend(input);
    assert!(hamlearn(&args).status.success());
    let (header, rows) = csv_rows(&bench.join("curve.csv"));
    assert_eq!(header, "t,infidelity,integrator_baseline");
    assert_eq!(rows.len(), 9);
    assert!(rows.windows(2).all(|w| w[0][0] < w[1][0]));
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r[1]) && r[2] < 1e-3));
    let fit = json(&bench.join("fit.json"));
    for key in ["A", "b", "stderr_A", "stderr_b", "t_range", "config_hash", "seed"] {
        assert!(fit.get(key).is_some(), "fit.json lacks {key}");
    }

    let land = tmp.path().join("land");
    let mut args = vec!["landscape", "--config", &cfg, "--out", s(&land)];
    args.extend(input);
    assert!(hamlearn(&args).status.success());
    let (header, rows) = csv_rows(&land.join("landscape.csv"));
    assert_eq!(header, "i,j,alpha,beta,loss");
    assert_eq!(rows.len(), 25);
    assert!(rows.iter().all(|r| r[4].is_finite()));

    let rate = tmp.path().join("rate");
    assert!(hamlearn(&["success-rate", "--config", &cfg, "--out", s(&rate)])
        .status
        .success());
    let text = fs::read_to_string(rate.join("table1.csv")).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(lines.next(), Some("Hamiltonian,N,Vanilla,NeuralODE"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..2], &["heisenberg", "3"]);
    assert!(row[2..].iter().all(|c| c.parse::<f64>().is_ok()));

    let sweep = tmp.path().join("sweep");
    assert!(hamlearn(&["sweep", "--config", &cfg, "--out", s(&sweep)])
        .status
        .success());
    let (header, rows) = csv_rows(&sweep.join("sweep.csv"));
    assert_eq!(header, "K,records,success_rate,median_error");
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), vec![2.0, 4.0]);
    assert_eq!(rows[1][1], 2.0 * rows[0][1]);
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = hamlearn(&["train", "--config", &cfg, "--out", s(&tmp.path().join("t"))]);
    assert_eq!(out.status.code(), Some(2));

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[system]\nnum_spins = 3\n").unwrap();
    let out = hamlearn(&["gen-data", "--config", s(&bad), "--out", s(&tmp.path().join("b"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn interrupted_training_resumes_to_the_same_result() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let full = tmp.path().join("full");
    hamlearn(&["train", "--config", &cfg, "--out", s(&full)]);
    let part = tmp.path().join("part");
    let out = hamlearn(&["train", "--config", &cfg, "--max-steps", "7", "--out", s(&part)]);
    assert!(out.status.success());
    assert!(!part.join("result.json").exists());
    let rest = tmp.path().join("rest");
    hamlearn(&[
        "train",
        "--config",
        &cfg,
        "--resume",
        s(&part.join("checkpoint.json")),
        "--out",
        s(&rest),
    ]);
    assert_eq!(
        fs::read(full.join("result.json")).unwrap(),
        fs::read(rest.join("result.json")).unwrap()
    );
}

#[test]
fn existing_artifacts_are_never_overwritten() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let dir = tmp.path().join("g");
    assert!(hamlearn(&["gen-data", "--config", &cfg, "--out", s(&dir)])
        .status
        .success());
    let before = fs::read(dir.join("dataset.txt")).unwrap();
    let out = hamlearn(&["gen-data", "--config", &cfg, "--seed", "10", "--out", s(&dir)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("refusing to overwrite"));
    assert_eq!(fs::read(dir.join("dataset.txt")).unwrap(), before);
}
