use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mini-corpus")
}

fn tdm(work: &Path, args: &[&str]) -> Output {
    let data = data_dir();
    Command::new(env!("CARGO_BIN_EXE_tdm"))
        .arg("--tei-dir")
        .arg(data.join("tei"))
        .arg("--papers")
        .arg(data.join("papers.json"))
        .arg("--evaluations")
        .arg(data.join("evaluations.json"))
        .arg("--work-dir")
        .arg(work)
        .args(["--seed", "7"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn evaluate_before_predict_is_a_usage_error() {
    let work = tempfile::tempdir().unwrap();
    let out = tdm(work.path(), &["evaluate"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!work.path().join("report.json").exists());
}

#[test]
fn missing_config_file_is_a_usage_error() {
    let work = tempfile::tempdir().unwrap();
    let out = tdm(work.path(), &["--config", "/nonexistent/pipeline.toml", "ingest"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn full_pipeline_writes_a_report_and_verifies() {
    let work = tempfile::tempdir().unwrap();
    let out = tdm(work.path(), &["all", "verify"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(work.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["meta"]["seed"], 7);
    for setting in ["with_unknown", "without_unknown"] {
        assert_eq!(report["average"][setting]["triple"]["micro_f1"], 1.0);
    }
    assert!(String::from_utf8_lossy(&out.stdout).contains("manifests verified"));
}

#[test]
fn rerun_with_same_seed_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = tdm(dir.path(), &["ingest", "build-corpus", "make-instances"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let mut compared = 0;
    for entry in std::fs::read_dir(a.path()).unwrap() {
        let name = entry.unwrap().file_name();
        let name = name.to_string_lossy();
        if name.starts_with("instances-") || name == "corpus.jsonl" || name == "folds.json" {
            let left = std::fs::read(a.path().join(&*name)).unwrap();
            let right = std::fs::read(b.path().join(&*name)).unwrap();
            assert!(left == right, "{name} differs between runs");
            compared += 1;
        }
    }
    assert!(compared >= 3);
}

#[test]
fn flags_override_the_config_file() {
    let work = tempfile::tempdir().unwrap();
    let config = work.path().join("pipeline.toml");
    std::fs::write(&config, "seed = 99\nk_false = 50\nthreshold = 0.9\n").unwrap();
    let out = tdm(
        work.path(),
        &["--config", config.to_str().unwrap(), "--threshold", "0.5", "all"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(work.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["meta"]["seed"], 7);
    assert_eq!(report["meta"]["threshold"], 0.5);
    // k_false comes from the file
    assert!(std::fs::read_dir(work.path())
        .unwrap()
        .any(|e| e.unwrap().file_name().to_string_lossy().ends_with("-50.jsonl")));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let work = tempfile::tempdir().unwrap();
    let config = work.path().join("pipeline.toml");
    std::fs::write(&config, "seeed = 1\n").unwrap();
    let out = tdm(work.path(), &["--config", config.to_str().unwrap(), "ingest"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn verify_detects_tampering() {
    let work = tempfile::tempdir().unwrap();
    assert_eq!(code(&tdm(work.path(), &["ingest", "build-corpus"])), 0);
    std::fs::write(work.path().join("folds.json"), "{}").unwrap();
    let out = tdm(work.path(), &["verify"]);
    assert_ne!(code(&out), 0);
}
