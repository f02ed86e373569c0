use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use a3sim::tensor::{read_tensors, save_tensor_file, Tensor};

const TOY_NET: &str = r#"{
  "name": "toy",
  "batch_size": 1,
  "input": [1, 1, 2],
  "layers": [{ "kind": "fc", "out_channels": 2, "relu": false }],
  "attack": { "target_label": 1, "lambda": 0.1, "learning_rate": 1.0, "iterations": 20 }
}"#;

fn a3sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_a3sim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn analyze_preset_to_stdout() {
    let out = a3sim(&["analyze", "--net", "example4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.starts_with("# manifest_sha256="));
    assert!(text.lines().count() > 2);
}

#[test]
fn analyze_json_is_valid() {
    let out = a3sim(&["analyze", "--net", "gtsrb-like", "--format", "json"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).expect("json report");
    assert_eq!(v["manifest_sha256"].as_str().map(str::len), Some(64));
}

#[test]
fn schedule_writes_trace_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = a3sim(&["schedule", "--net", "example4", "--capacity", "4", "--out", path_str(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let body = trace.split_once('\n').unwrap().1;
    assert_eq!(body, include_str!("golden/example4_trace.csv"));
    assert!(dir.path().join("metrics.csv").exists());
}

#[test]
fn runs_are_deterministic() {
    let args = ["compare", "--net", "lisa-like", "--batches", "2", "--format", "json"];
    let a = a3sim(&args);
    let b = a3sim(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn manifest_tracks_inputs_but_not_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let first = stdout(&a3sim(&["analyze", "--net", "example4"]));
    a3sim(&["analyze", "--net", "example4", "--out", path_str(dir.path())]);
    let written = fs::read_to_string(dir.path().join("analysis.csv")).unwrap();
    assert_eq!(first.lines().next(), written.lines().next());
    let other = stdout(&a3sim(&["analyze", "--net", "example4", "--replication", "2"]));
    assert_ne!(first.lines().next(), other.lines().next());
}

#[test]
fn missing_net_file_is_usage_error() {
    let out = a3sim(&["analyze", "--net", "/nonexistent/net.json"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn malformed_config_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, "{ \"name\": ").unwrap();
    assert_eq!(code(&a3sim(&["analyze", "--net", path_str(&path)])), 2);
}

#[test]
fn unknown_flag_and_hw_preset_are_usage_errors() {
    assert_eq!(code(&a3sim(&["analyze", "--bogus"])), 2);
    assert_eq!(code(&a3sim(&["schedule", "--net", "example4", "--hw", "nope"])), 2);
}

#[test]
fn unschedulable_capacity_is_simulation_error() {
    let out = a3sim(&["schedule", "--net", "example4", "--capacity", "1"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn inconsistent_network_is_simulation_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    fs::write(&path, TOY_NET.replace("\"target_label\": 1", "\"target_label\": 5")).unwrap();
    assert_eq!(code(&a3sim(&["analyze", "--net", path_str(&path)])), 1);
}

#[test]
fn train_toy_model_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("toy.json");
    let weights = dir.path().join("weights.bin");
    let input = dir.path().join("input.bin");
    let out_dir = dir.path().join("out");
    fs::write(&net, TOY_NET).unwrap();
    save_tensor_file(&weights, &[Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0])]).unwrap();
    save_tensor_file(&input, &[Tensor::new(vec![1, 1, 2], vec![1.0, 0.0])]).unwrap();

    let out = a3sim(&[
        "train",
        "--net",
        path_str(&net),
        "--weights",
        path_str(&weights),
        "--input",
        path_str(&input),
        "--format",
        "json",
        "--out",
        path_str(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let log: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("train_log.json")).unwrap()).unwrap();
    assert_eq!(log["datapath"], "float");
    let first = log["first_success"].as_u64().expect("target reached");
    assert!(first <= 20);

    let mask = read_tensors(&fs::read(out_dir.join("mask.bin")).unwrap()[..]).unwrap();
    assert_eq!(mask[0].dims, vec![1, 1, 2]);
    assert!(mask[0].data[1] > mask[0].data[0]);
}

#[test]
fn quantized_training_matches_float_on_toy_model() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("toy.json");
    let weights = dir.path().join("weights.bin");
    let input = dir.path().join("input.bin");
    fs::write(&net, TOY_NET).unwrap();
    save_tensor_file(&weights, &[Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0])]).unwrap();
    save_tensor_file(&input, &[Tensor::new(vec![1, 1, 2], vec![1.0, 0.0])]).unwrap();
    let run = |extra: &[&str]| {
        let mut args = vec![
            "train",
            "--net",
            path_str(&net),
            "--weights",
            path_str(&weights),
            "--input",
            path_str(&input),
            "--format",
            "json",
        ];
        args.extend_from_slice(extra);
        let out = a3sim(&args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        serde_json::from_str::<serde_json::Value>(&stdout(&out)).unwrap()
    };
    let float = run(&[]);
    let crossbar = run(&["--quantized", "--hw", "a3px"]);
    assert_eq!(crossbar["datapath"], "crossbar");
    assert_eq!(crossbar["first_success"], float["first_success"]);
    let a = float["final_mask_norm"].as_f64().unwrap();
    let b = crossbar["final_mask_norm"].as_f64().unwrap();
    assert!((a - b).abs() < 1e-3 * a, "{a} vs {b}");
}

#[test]
fn truncated_tensor_file_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("input.bin");
    fs::write(&input, [2u8, 0, 0]).unwrap();
    let out = a3sim(&["train", "--net", "example4", "--input", path_str(&input)]);
    assert_eq!(code(&out), 2);
}
