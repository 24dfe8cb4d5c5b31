//! CLI surface: exit codes, stage dependencies, flag plumbing, and
//! end-to-end determinism at a tiny scale.

use std::path::Path;
use std::process::Command;

fn lesionbench() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lesionbench"))
}

/// Flags for a seconds-scale experiment.
fn tiny_flags(out: &Path, seed: u64) -> Vec<String> {
    [
        "--image-height", "24",
        "--image-width", "24",
        "--train-size", "40",
        "--val-size", "16",
        "--holdout-size", "24",
        "--lesion-diameter", "5",
        "--blocks", "4",
        "--dense-units", "8",
        "--max-epochs", "2",
        "--patience", "1",
        "--batch-size", "16",
        "--runs", "1",
        "--methods", "gradient,lrp_z",
        "--eval-count", "5",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain(["--out".to_string(), out.display().to_string()])
    .chain(["--seed".to_string(), seed.to_string()])
    .collect()
}

#[test]
fn help_documents_every_flag() {
    let out = lesionbench().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in [
        "--config", "--seed", "--scale", "--out", "--methods", "--transform", "--background",
        "--archive", "--image-height", "--image-width", "--train-size", "--val-size",
        "--holdout-size", "--perlin-rows", "--perlin-cols", "--lesion-diameter",
        "--lesion-intensity", "--lesion-count", "--learning-rate", "--momentum", "--batch-size",
        "--eval-batch-size", "--max-epochs", "--loss-stop", "--patience", "--min-delta",
        "--runs", "--blocks", "--dense-units", "--eval-count", "--alpha", "--beta", "--epsilon",
        "--selection", "--mask-restricted", "--montage", "--boxplots",
    ] {
        assert!(text.contains(flag), "--help missing {flag}");
    }
    for sub in ["generate", "train", "explain", "evaluate", "report", "run-all"] {
        assert!(text.contains(sub), "--help missing subcommand {sub}");
    }
}

#[test]
fn unknown_flags_and_subcommands_exit_2() {
    let out = lesionbench().args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = lesionbench().args(["generate", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = lesionbench().args(["--scale", "galactic", "generate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_before_explain_is_a_stage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("exp");
    let mut args = tiny_flags(&out_dir, 1);
    args.push("generate".into());
    assert!(lesionbench().args(&args).status().unwrap().success());

    let mut args = tiny_flags(&out_dir, 1);
    args.push("evaluate".into());
    let out = lesionbench().args(&args).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("stage"), "diagnostic not stage-named: {msg}");
}

#[test]
fn generate_writes_manifest_with_requested_splits() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("exp");
    let mut args = tiny_flags(&out_dir, 1);
    args.push("generate".into());
    assert!(lesionbench().args(&args).status().unwrap().success());
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("dataset/perlin/manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["split_sizes"], serde_json::json!([40, 16, 24]));
    assert_eq!(manifest["image_shape"], serde_json::json!([24, 24]));
    assert_eq!(manifest["master_seed"], serde_json::json!(1));
}

#[test]
fn paper_preset_manifest_arithmetic() {
    // preset wiring only; building the 6.5 GB paper dataset is a
    // long-running job, not a test
    use lesionbench::harness::{ExperimentConfig, Scale};
    let cfg = ExperimentConfig::preset(Scale::Paper, 1, "unused".into());
    assert_eq!(cfg.datasets[0].split_sizes, (42_000, 6_000, 12_000));
}

#[test]
fn run_all_twice_matches_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let mut args = tiny_flags(out, 9);
        args.push("run-all".into());
        let st = lesionbench().args(&args).output().unwrap();
        assert!(
            st.status.success(),
            "run-all failed: {}",
            String::from_utf8_lossy(&st.stderr)
        );
    }
    let a = std::fs::read(out_a.join("report.json")).unwrap();
    let b = std::fs::read(out_b.join("report.json")).unwrap();
    assert_eq!(
        lesionbench::harness::sha256_hex(&a),
        lesionbench::harness::sha256_hex(&b)
    );

    // rerun on a completed directory: skips work, identical report
    let mut args = tiny_flags(&out_a, 9);
    args.push("run-all".into());
    let st = lesionbench().args(&args).output().unwrap();
    assert!(st.status.success());
    let stderr = String::from_utf8_lossy(&st.stderr);
    assert!(stderr.contains("skipping"), "resume did not skip: {stderr}");
    let again = std::fs::read(out_a.join("report.json")).unwrap();
    assert_eq!(a, again);
}

#[test]
fn stage_chain_via_individual_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("exp");
    for sub in ["generate", "train", "explain", "evaluate", "report"] {
        let mut args = tiny_flags(&out_dir, 4);
        args.push(sub.into());
        let st = lesionbench().args(&args).output().unwrap();
        assert!(
            st.status.success(),
            "{sub} failed: {}",
            String::from_utf8_lossy(&st.stderr)
        );
    }
    assert!(out_dir.join("report.json").exists());
    assert!(out_dir.join("summary.csv").exists());
    let metrics =
        lesionbench::xmetrics::read_metrics_csv(&out_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.rows.len(), 10);
}
