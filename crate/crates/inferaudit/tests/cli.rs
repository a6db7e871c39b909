//! CLI integration: the full operator walk from data generation to
//! assessment and trace analysis, plus exit-code contracts.

mod common;

use common::shared_fixture;
use std::path::Path;
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_inferaudit")
}

fn run_ok(args: &[&str]) -> String {
    let output = Command::new(bin()).args(args).output().unwrap();
    assert!(
        output.status.success(),
        "inferaudit {args:?} failed:\n{}{}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn spec_json(name: &str, classes: usize, seed: u64) -> String {
    format!(
        r#"{{"name":"{name}","n_samples":600,"n_features":10,"n_classes":{classes},
            "attributes":[{{"name":"tone","num_classes":2,"correlation":0.8}}],
            "noise_scale":2.0,"seed":{seed}}}"#
    )
}

#[test]
fn gen_train_assess_analyze_walkthrough() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let spec_path = root.join("spec.json");
    std::fs::write(&spec_path, spec_json("walk", 3, 21)).unwrap();
    let env_dir = root.join("env");
    let targets = root.join("targets");

    // gen-data: artifacts plus registry rows.
    let out = run_ok(&[
        "gen-data",
        "--spec",
        spec_path.to_str().unwrap(),
        "--env-dir",
        env_dir.to_str().unwrap(),
        "--targets-dir",
        targets.to_str().unwrap(),
    ]);
    assert!(out.contains("registry now has 1 datasets"), "{out}");
    assert!(env_dir.join("data/walk_shadow.bin").is_file());
    assert!(env_dir.join("available_tasks.json").is_file());

    // A duplicate name is an error.
    let dup = Command::new(bin())
        .args([
            "gen-data",
            "--spec",
            spec_path.to_str().unwrap(),
            "--env-dir",
            env_dir.to_str().unwrap(),
            "--targets-dir",
            targets.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!dup.status.success());
    assert!(String::from_utf8_lossy(&dup.stderr).contains("already registered"));

    // train-target produces the artifact and scoring bundle.
    let service_dir = root.join("service");
    let out = run_ok(&[
        "train-target",
        "--train",
        targets.join("walk/target_train.bin").to_str().unwrap(),
        "--eval",
        targets.join("walk/target_eval.bin").to_str().unwrap(),
        "--model",
        "medium",
        "--env-dir",
        env_dir.to_str().unwrap(),
        "--epochs",
        "120",
        "--seed",
        "3",
        "--out-dir",
        service_dir.to_str().unwrap(),
    ]);
    assert!(out.contains("train_accuracy"), "{out}");
    for f in ["members.bin", "nonmembers.bin", "eval.bin", "probes.bin"] {
        assert!(service_dir.join("scoring").join(f).is_file(), "{f}");
    }

    // Serve in-process for the assess step (the `serve` subcommand runs
    // until killed, so the test serves through the library instead).
    let handle = inferaudit::service::serve(&inferaudit::service::ServiceConfig {
        artifact_path: service_dir.join("target_model.bin"),
        expose_embedding: true,
        query_budget: None,
        addr: "127.0.0.1:0".parse().unwrap(),
    })
    .unwrap();
    let info = serde_json::json!({
        "task_description": "a 3-way cluster category prediction service",
        "predict_url": handle.predict_url(),
        "embedding_url": handle.embedding_url(),
        "input_format": "rows of 10 real-valued features",
        "output_format": "3-dim posteriors",
        "sensitive_attribute": "tone",
    });
    let info_path = root.join("service_info.json");
    std::fs::write(&info_path, info.to_string()).unwrap();

    let ws = root.join("ws");
    let out = run_ok(&[
        "assess",
        "--service-info",
        info_path.to_str().unwrap(),
        "--env-dir",
        env_dir.to_str().unwrap(),
        "--scoring-dir",
        service_dir.join("scoring").to_str().unwrap(),
        "--workspace",
        ws.to_str().unwrap(),
        "--planner",
        "mock",
        "--seed",
        "1",
    ]);
    assert!(out.contains("assessment complete"), "{out}");
    assert!(ws.join("report.md").is_file());
    assert!(ws.join("manifest.json").is_file());

    // analyze: clean traces, findings written.
    let out = run_ok(&["analyze", "--trace-dir", ws.to_str().unwrap()]);
    assert!(out.contains("clean"), "{out}");
    assert!(ws.join("findings.json").is_file());

    handle.shutdown();
}

#[test]
fn assess_exit_codes_are_documented_behavior() {
    let fixture = shared_fixture();
    let dir = tempfile::tempdir().unwrap();
    // Unreachable service: exit 1 with a diagnostic.
    let mut info = fixture.services[0].info.clone();
    info.predict_url = "http://127.0.0.1:9/predict".into();
    let info_path = dir.path().join("bad_info.json");
    std::fs::write(&info_path, serde_json::to_string(&info).unwrap()).unwrap();
    let output = Command::new(bin())
        .args([
            "assess",
            "--service-info",
            info_path.to_str().unwrap(),
            "--env-dir",
            fixture.env.environment_dir.to_str().unwrap(),
            "--scoring-dir",
            fixture.services[0].scoring_dir.to_str().unwrap(),
            "--workspace",
            dir.path().join("ws").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("not reachable"));

    // A faulty planner that loops forever: the run finishes incomplete
    // with exit code 2.
    let loop_info = dir.path().join("loop_info.json");
    std::fs::write(
        &loop_info,
        serde_json::to_string(&fixture.services[0].info).unwrap(),
    )
    .unwrap();
    let output = Command::new(bin())
        .args([
            "assess",
            "--service-info",
            loop_info.to_str().unwrap(),
            "--env-dir",
            fixture.env.environment_dir.to_str().unwrap(),
            "--scoring-dir",
            fixture.services[0].scoring_dir.to_str().unwrap(),
            "--workspace",
            dir.path().join("ws2").to_str().unwrap(),
            "--planner",
            "faulty:dominant_loop",
            "--max-steps",
            "12",
        ])
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(2),
        "stdout: {}",
        String::from_utf8_lossy(&output.stdout)
    );
}

#[test]
fn bench_aggregates_a_small_matrix() {
    let fixture = shared_fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut entries = Vec::new();
    for name in ["synth_five", "synth_attr"] {
        let svc = fixture.services.iter().find(|s| s.name == name).unwrap();
        let info_path = dir.path().join(format!("{name}.json"));
        std::fs::write(&info_path, serde_json::to_string(&svc.info).unwrap()).unwrap();
        entries.push(serde_json::json!({
            "name": name,
            "service_info": info_path,
            "env_dir": fixture.env.environment_dir,
            "scoring_dir": svc.scoring_dir,
            "runs": 2,
            "base_seed": 31,
        }));
    }
    let matrix_path = dir.path().join("matrix.json");
    std::fs::write(
        &matrix_path,
        serde_json::json!({ "runs": entries }).to_string(),
    )
    .unwrap();
    let ws = dir.path().join("bench_ws");
    let out = run_ok(&[
        "bench",
        "--matrix",
        matrix_path.to_str().unwrap(),
        "--workspace",
        ws.to_str().unwrap(),
    ]);
    assert!(out.contains("synth_five"), "{out}");
    assert!(out.contains("synth_attr"));
    assert!(out.contains("100%"), "{out}");
    let bench: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.join("bench.json")).unwrap()).unwrap();
    assert_eq!(bench.as_array().unwrap().len(), 2);
    for row in bench.as_array().unwrap() {
        assert_eq!(row["completion_rate"], 1.0);
        assert_eq!(row["runs"], 2);
    }

    // An empty matrix is an error.
    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, r#"{"runs": []}"#).unwrap();
    let output = Command::new(bin())
        .args([
            "bench",
            "--matrix",
            empty.to_str().unwrap(),
            "--workspace",
            ws.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn analyze_missing_directory_fails() {
    let output = Command::new(bin())
        .args(["analyze", "--trace-dir", "/nonexistent/trace/dir"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn serve_subcommand_brings_up_a_probeable_service() {
    let fixture = shared_fixture();
    let mut child = Command::new(bin())
        .args([
            "serve",
            "--artifact",
            fixture.services[0].artifact.to_str().unwrap(),
            "--addr",
            "127.0.0.1:0",
            "--budget",
            "50",
        ])
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    // Read the announced URL from stdout.
    use std::io::{BufRead, BufReader};
    let stdout = child.stdout.take().unwrap();
    let mut reader = BufReader::new(stdout);
    let mut predict_url = String::new();
    for _ in 0..4 {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        if let Some(url) = line.strip_prefix("predict: ") {
            predict_url = url.trim().to_string();
            break;
        }
    }
    assert!(predict_url.starts_with("http://"), "no url announced");
    let (artifact_model, _) =
        inferaudit::nn::read_model(Path::new(&fixture.services[0].artifact)).unwrap();
    let client = inferaudit::service::ServiceClient::new(predict_url, None);
    let inputs = inferaudit::nn::Matrix::zeros(2, artifact_model.input_width());
    let posteriors = inferaudit::service::ServiceApi::predict(&client, &inputs).unwrap();
    assert_eq!(posteriors.rows(), 2);
    child.kill().unwrap();
    let _ = child.wait();
}
