use std::path::Path;
use std::process::{Command, Output};

fn softhg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_softhg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tiny_train_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("train.json");
    let body = format!(
        r#"{{"epochs": 2, "n_test": 30, "dataset": {{"n_samples": 90}}, "ses": {{"m_fixed": 2, "m_dyn": 4, "k": 2, "window": 8}}{extra}}}"#
    );
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn gradcheck_passes_at_seed_7() {
    let o = softhg(&["gradcheck", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("PASS") && !out.contains("FAIL"));
}

#[test]
fn gradcheck_json_is_parseable() {
    let o = softhg(&["gradcheck", "--norm", "vnorm", "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let o = softhg(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error:") && err.contains("Usage"), "{err}");
}

#[test]
fn unknown_flag_is_usage_error() {
    let o = softhg(&["oracle", "--fast"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oracle_reports_deviation() {
    let o = softhg(&["oracle", "--instances", "20"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("worst_abs_deviation="));
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b.csv");
    let o = softhg(&[
        "bench",
        "--ops",
        "softhgnn,attention",
        "--n",
        "16..64",
        "--d",
        "8",
        "--m",
        "2",
        "--heads",
        "2",
        "--no-check",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "op,n,d,m,repeats,median_seconds,workspace_bytes");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("softhgnn,16,8,2,5,"));
}

#[test]
fn bench_rejects_unknown_op() {
    let o = softhg(&["bench", "--ops", "softhgnn,conv", "--out", "/tmp/never.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("valid ops: softhgnn, attention, hgnn"));
}

#[test]
fn bench_checks_output_directory_first() {
    let o = softhg(&["bench", "--n", "16,32", "--out", "/no/such/dir/b.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not exist"));
}

#[test]
fn train_missing_config_is_usage_error() {
    let o = softhg(&["train", "--config", "/no/such/config.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_divergence_is_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_train_config(dir.path(), r#", "learning_rate": 1e300"#);
    let o = softhg(&["train", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("diverged"));
}

#[test]
fn train_params_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_train_config(dir.path(), "");
    let params = dir.path().join("params.json");
    let p = params.to_str().unwrap();
    let o = softhg(&[
        "train",
        "--config",
        &cfg,
        "--save-params",
        p,
        "--out",
        dir.path().join("a.csv").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let map: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&params).unwrap()).unwrap();
    assert!(map.get("head_w").is_some() && map.get("w_pre").is_some());

    let o = softhg(&[
        "train",
        "--config",
        &cfg,
        "--init-params",
        p,
        "--epochs",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn ses_demo_dumps_state() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("state.json");
    let o = softhg(&[
        "ses-demo",
        "--passes",
        "10",
        "--fixed",
        "2",
        "--dyn",
        "4",
        "--topk",
        "2",
        "--window",
        "4",
        "--state",
        state.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("p_target=0.5000"));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&state).unwrap()).unwrap();
    assert_eq!(v["passes_seen"], 10);
    assert_eq!(v["window"].as_array().unwrap().len(), 4);
    let p_sum: f64 = v["p"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .sum();
    assert!((p_sum - 2.0).abs() < 1e-12);
}

#[test]
fn ses_demo_rejects_k_above_dynamic_count() {
    let o = softhg(&["ses-demo", "--dyn", "4", "--topk", "5"]);
    assert_eq!(o.status.code(), Some(2));
}
