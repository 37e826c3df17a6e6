//! Process-level checks of the command-line surface: stage ordering, exit
//! codes, overrides and end-to-end reproducibility.

use std::path::Path;
use std::process::Command;

fn keratitis() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_keratitis"));
    cmd.env("KERATITIS_LOG", "quiet");
    cmd
}

fn write_config(dir: &Path, workdir: &Path, extra: serde_json::Value) -> std::path::PathBuf {
    let mut config = serde_json::json!({
        "data": { "synthetic": { "n_groups": 120, "feature_dim": 8, "separability": 2.0 } },
        "workdir": workdir,
        "seed": 5,
        "split": { "k": 6 },
        "model": { "variant": "Mv2", "hidden": 12 },
        "train": { "epochs": 4 }
    });
    if let (Some(base), Some(patch)) = (config.as_object_mut(), extra.as_object()) {
        for (k, v) in patch {
            base.insert(k.clone(), v.clone());
        }
    }
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn eval_before_predict_exits_one_naming_the_missing_file() {
    let tmp = tempfile::TempDir::new().unwrap();
    let config = write_config(tmp.path(), &tmp.path().join("run"), serde_json::json!({}));
    let out = keratitis().args(["eval", "--config"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("manifest.csv"), "stderr: {stderr}");
    assert!(stderr.contains("eval"), "stderr: {stderr}");
}

#[test]
fn stage_sequence_and_dependency_errors() {
    let tmp = tempfile::TempDir::new().unwrap();
    let config = write_config(tmp.path(), &tmp.path().join("run"), serde_json::json!({}));

    let synth = keratitis().args(["synth", "--config"]).arg(&config).status().unwrap();
    assert!(synth.success());

    // train before split: exit 1 naming assignment.csv
    let out = keratitis().args(["train", "--config"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("assignment.csv"));

    for stage in ["split", "train", "predict", "eval", "stats", "report"] {
        let status = keratitis().args([stage, "--config"]).arg(&config).status().unwrap();
        assert!(status.success(), "stage {stage} failed");
    }
    assert!(tmp.path().join("run/report.txt").exists());
}

#[test]
fn rerun_of_full_pipeline_is_byte_identical() {
    let tmp = tempfile::TempDir::new().unwrap();
    let config_a = write_config(tmp.path(), &tmp.path().join("a"), serde_json::json!({}));
    assert!(keratitis().args(["run", "--config"]).arg(&config_a).status().unwrap().success());

    let dir_b = tempfile::TempDir::new().unwrap();
    let config_b = write_config(dir_b.path(), &dir_b.path().join("b"), serde_json::json!({}));
    assert!(keratitis().args(["run", "--config"]).arg(&config_b).status().unwrap().success());

    let report_a = std::fs::read(tmp.path().join("a/report.txt")).unwrap();
    let report_b = std::fs::read(dir_b.path().join("b/report.txt")).unwrap();
    assert_eq!(report_a, report_b);
}

#[test]
fn flag_overrides_are_applied() {
    let tmp = tempfile::TempDir::new().unwrap();
    let config = write_config(tmp.path(), &tmp.path().join("run"), serde_json::json!({}));
    // ST with clinical loss is rejected at the train stage
    assert!(keratitis().args(["synth", "--config"]).arg(&config).status().unwrap().success());
    assert!(keratitis().args(["split", "--config"]).arg(&config).status().unwrap().success());
    let out = keratitis()
        .args([
            "train",
            "--variant",
            "ST",
            "--clinical-loss",
            "true",
            "--config",
        ])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("clinical"));

    // restricted rounds produce only those checkpoints
    let status = keratitis()
        .args(["train", "--rounds", "0,2", "--config"])
        .arg(&config)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(tmp.path().join("run/models/round0.ckpt").exists());
    assert!(!tmp.path().join("run/models/round1.ckpt").exists());
    assert!(tmp.path().join("run/models/round2.ckpt").exists());

    // bad variant is a validation error (exit 1)
    let out = keratitis()
        .args(["train", "--variant", "Mv3", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn rerunning_a_stage_with_unchanged_inputs_is_idempotent() {
    let tmp = tempfile::TempDir::new().unwrap();
    let config = write_config(tmp.path(), &tmp.path().join("run"), serde_json::json!({}));
    assert!(keratitis().args(["run", "--config"]).arg(&config).status().unwrap().success());
    let metrics_before = std::fs::read(tmp.path().join("run/eval/metrics.csv")).unwrap();
    let report_before = std::fs::read(tmp.path().join("run/report.txt")).unwrap();
    assert!(keratitis().args(["eval", "--config"]).arg(&config).status().unwrap().success());
    assert!(keratitis().args(["report", "--config"]).arg(&config).status().unwrap().success());
    assert_eq!(metrics_before, std::fs::read(tmp.path().join("run/eval/metrics.csv")).unwrap());
    assert_eq!(report_before, std::fs::read(tmp.path().join("run/report.txt")).unwrap());
}

#[test]
fn unknown_config_path_is_io_error_exit_two() {
    let out = keratitis()
        .args(["synth", "--config", "/nonexistent/config.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn single_task_pipeline_with_aux_models_runs() {
    let tmp = tempfile::TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        &tmp.path().join("run"),
        serde_json::json!({
            "data": { "synthetic": { "n_groups": 200, "feature_dim": 8, "separability": 2.0 } },
            "model": { "variant": "ST", "hidden": 12, "aux_sex": true, "aux_age": true },
            "threshold": { "mode": "youden" }
        }),
    );
    assert!(keratitis().args(["run", "--config"]).arg(&config).status().unwrap().success());
    let report = std::fs::read_to_string(tmp.path().join("run/report.txt")).unwrap();
    assert!(report.contains("variant:        ST"));
    // auxiliary sex/age rows reach the metrics table
    assert!(report.lines().any(|l| l.starts_with("sex")), "{report}");
    assert!(report.lines().any(|l| l.starts_with("age")), "{report}");
    // single-task checkpoints per task exist
    assert!(tmp.path().join("run/models/round0_bacteria.ckpt").exists());
    assert!(tmp.path().join("run/models/round0_sex.ckpt").exists());
}
