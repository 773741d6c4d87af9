mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use aerograph::api::{router, AppState};
use aerograph::context::RunContext;
use aerograph::ops::{IngestReport, PolicyEvaluation};
use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn ingest_reports_windows_for_shipped_data() {
    let (cases, flights) = common::shipped_data();
    let (code, out) = common::run_cli(&["ingest", "--cases", s(&cases), "--flights", s(&flights)]);
    assert_eq!(code, 0);
    let report: IngestReport = serde_json::from_str(&out).unwrap();
    assert!(report.days >= 400);
    assert_eq!(report.windows, report.train + report.validation + report.test);
    assert!(report.windows > 0);
}

#[test]
fn shipped_datasets_match_the_generator() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    for (name, extra) in [("synthetic", None), ("hub", Some("CA"))] {
        let dir = scratch(&format!("synth_{name}"));
        let mut args = vec!["synth", "--out", s(&dir)];
        if let Some(hub) = extra {
            args.extend(["--hub", hub]);
        }
        assert_eq!(common::run_cli(&args).0, 0);
        for file in ["cases.csv", "flights.csv"] {
            let shipped = std::fs::read(root.join(name).join(file)).unwrap();
            let fresh = std::fs::read(dir.join(file)).unwrap();
            assert!(shipped == fresh, "data/{name}/{file} differs from the generator output");
        }
    }
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let (cases, flights) = common::shipped_data();
    let mut runs = Vec::new();
    for name in ["det_a", "det_b"] {
        let dir = scratch(name);
        let args = [
            "train", "--cases", s(&cases), "--flights", s(&flights), "--out", s(&dir), "--ensemble", "2", "--seed", "7",
            "--epochs", "3",
        ];
        let (code, out) = common::run_cli(&args);
        assert_eq!(code, 0);
        let v: Value = serde_json::from_str(&out).unwrap();
        runs.push((dir, v["manifest_hash"].as_str().unwrap().to_string()));
    }
    assert_eq!(runs[0].1, runs[1].1);
    for i in 0..2 {
        let name = aerograph_core::training::member_checkpoint_name(i);
        let a = std::fs::read(runs[0].0.join("checkpoints").join(&name)).unwrap();
        let b = std::fs::read(runs[1].0.join("checkpoints").join(&name)).unwrap();
        assert!(a == b, "{name} differs between runs");
    }
}

async fn api_evaluate(ctx: RunContext, body: Value) -> Vec<u8> {
    let state = Arc::new(AppState::new(ctx).unwrap());
    let req = Request::post("/v1/policy/evaluate")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = router(state).oneshot(req).await.unwrap();
    assert!(resp.status().is_success());
    resp.into_body().collect().await.unwrap().to_bytes().to_vec()
}

#[test]
fn policy_sweep_and_single_policy_agree_with_the_service() {
    let dir = scratch("cli_policy");
    common::trained_run(&dir);
    let stride = common::STRIDE.to_string();
    let (code, out) = common::run_cli(&[
        "policy", "--out", s(&dir), "--nodes", "WE,NA", "--levels", "25,50,75", "--models", "2", "--stride", &stride,
    ]);
    assert_eq!(code, 0);
    let summary: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary["policies"], 15);

    let (code, out) = common::run_cli(&["policy", "--out", s(&dir), "--reductions", "WE=0.5,NA=0.25"]);
    assert_eq!(code, 0);
    let cli: PolicyEvaluation = serde_json::from_str(&out).unwrap();
    assert!(cli.policy_id.is_some());

    let rt = tokio::runtime::Runtime::new().unwrap();
    let body = serde_json::json!({"reductions": {"WE": 0.5, "NA": 0.25}});
    let api: PolicyEvaluation = serde_json::from_slice(&rt.block_on(api_evaluate(RunContext::open(&dir).unwrap(), body))).unwrap();
    assert_eq!(cli, api);

    // a new manifest makes the stored sweep stale
    let (code, _) = common::run_cli(&["bias", "--out", s(&dir), "--stride", "9"]);
    assert_eq!(code, 0);
    let (code, _) = common::run_cli(&["policy", "--out", s(&dir), "--reductions", "WE=0.5"]);
    assert_eq!(code, 2);
    assert!(AppState::new(RunContext::open(&dir).unwrap()).is_err());
}

#[test]
fn exit_codes_follow_error_kinds() {
    let missing = scratch("cli_missing");
    assert_eq!(common::run_cli(&["bogus"]).0, 1);
    assert_eq!(common::run_cli(&["train", "--out", "x"]).0, 1);
    assert_eq!(common::run_cli(&["bias", "--out", s(&missing)]).0, 2);
    let (cases, _) = common::shipped_data();
    assert_eq!(common::run_cli(&["ingest", "--cases", s(&cases), "--flights", s(&missing)]).0, 2);
    assert_eq!(common::run_cli(&["policy", "--out", s(&missing), "--levels", "150"]).0, 2);
    assert_eq!(common::run_cli(&["--help"]).0, 0);
}

#[test]
fn invalid_arguments_exit_1_on_a_trained_run() {
    let dir = scratch("cli_invalid");
    common::trained_run(&dir);
    assert_eq!(common::run_cli(&["policy", "--out", s(&dir), "--nodes", "WE", "--levels", "150"]).0, 1);
    assert_eq!(common::run_cli(&["policy", "--out", s(&dir), "--nodes", "XX"]).0, 1);
    assert_eq!(common::run_cli(&["sensitivity", "--out", s(&dir), "--models", "9"]).0, 1);
    assert_eq!(common::run_cli(&["policy", "--out", s(&dir), "--reductions", "WE=1.5"]).0, 1);
    // no sensitivity ranking to choose default nodes from
    assert_eq!(common::run_cli(&["policy", "--out", s(&dir)]).0, 2);
}

#[test]
fn binary_reads_run_dir_from_environment() {
    let dir = scratch("cli_env");
    let out = Command::new(env!("CARGO_BIN_EXE_aerograph"))
        .args(["synth", "--days", "120"])
        .env("AEROGRAPH_DATA_DIR", &dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("cases.csv").exists());
    let out = Command::new(env!("CARGO_BIN_EXE_aerograph")).arg("nonsense").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}
