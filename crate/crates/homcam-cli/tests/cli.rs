//! End-to-end CLI checks on a small configuration: stage chaining,
//! reproducible outputs and exit codes.

use std::path::Path;
use std::process::Command;

fn homcam() -> Command {
    Command::new(env!("CARGO_BIN_EXE_homcam"))
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg = homcam::config::ExperimentConfig::default();
    cfg.scan = homcam::config::ScanPlan::linspace(0.12, 0.24, 24, 1.0);
    cfg.analysis.blend_mc_samples = 20_000;
    let path = dir.join("config.json");
    cfg.write(&path).unwrap();
    path
}

fn sha256_file(path: &Path) -> String {
    use sha2::Digest;
    let bytes = std::fs::read(path).unwrap();
    let out = sha2::Sha256::digest(&bytes);
    out.iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn simulate_same_seed_gives_identical_hit_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = homcam::config::ExperimentConfig::default();
    cfg.scan = homcam::config::ScanPlan::linspace(0.12, 0.24, 4, 0.2);
    let cfg_path = dir.path().join("config.json");
    cfg.write(&cfg_path).unwrap();

    for run in ["a", "b"] {
        let status = homcam()
            .args(["simulate", "--seed", "7"])
            .arg("--config")
            .arg(&cfg_path)
            .arg("--hits")
            .arg(dir.path().join(format!("{run}.bin")))
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(
        sha256_file(&dir.path().join("a.bin")),
        sha256_file(&dir.path().join("b.bin"))
    );
    // different seed differs
    let status = homcam()
        .args(["simulate", "--seed", "8"])
        .arg("--config")
        .arg(&cfg_path)
        .arg("--hits")
        .arg(dir.path().join("c.bin"))
        .status()
        .unwrap();
    assert!(status.success());
    assert_ne!(
        sha256_file(&dir.path().join("a.bin")),
        sha256_file(&dir.path().join("c.bin"))
    );
}

#[test]
fn pipeline_writes_all_artifacts_and_stages_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = small_config(dir.path());
    let out = dir.path().join("run");
    let output = homcam()
        .args(["pipeline", "--seed", "3"])
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    for name in [
        "config_used.json",
        "hits.bin",
        "truth.csv",
        "photons.csv",
        "pairs.csv",
        "dip_curve.csv",
        "results.json",
        "manifest.json",
    ] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let results: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
    let v = results["dip_fit"]["visibility"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&v));

    // stage-wise run over the same hit file reproduces photons and pairs
    let staged = dir.path().join("staged");
    std::fs::create_dir_all(&staged).unwrap();
    let status = homcam()
        .arg("recon")
        .arg("--config")
        .arg(&cfg_path)
        .arg("--hits")
        .arg(out.join("hits.bin"))
        .arg("--out")
        .arg(&staged)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(
        sha256_file(&out.join("photons.csv")),
        sha256_file(&staged.join("photons.csv"))
    );
    assert_eq!(
        sha256_file(&out.join("pairs.csv")),
        sha256_file(&staged.join("pairs.csv"))
    );

    let status = homcam()
        .args(["analyze", "--seed", "3"])
        .arg("--config")
        .arg(&cfg_path)
        .arg("--photons")
        .arg(staged.join("photons.csv"))
        .arg("--pairs")
        .arg(staged.join("pairs.csv"))
        .arg("--out")
        .arg(&staged)
        .status()
        .unwrap();
    assert!(status.success());
    let staged_results: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(staged.join("results.json")).unwrap())
            .unwrap();
    // identical fits from the file-backed route
    assert_eq!(
        results["dip_fit"]["visibility"],
        staged_results["dip_fit"]["visibility"]
    );
    assert_eq!(
        results["cross_peak_fit"]["sigma1_ns"],
        staged_results["cross_peak_fit"]["sigma1_ns"]
    );

    // report works in all formats
    for format in ["text", "csv", "json"] {
        let output = homcam()
            .arg("report")
            .arg("--results")
            .arg(out.join("results.json"))
            .args(["--format", format])
            .output()
            .unwrap();
        assert!(output.status.success());
        assert!(!output.stdout.is_empty());
    }
}

#[test]
fn invalid_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.json");
    let mut v: serde_json::Value = serde_json::from_str(
        &homcam::config::ExperimentConfig::default().to_json_pretty(),
    )
    .unwrap();
    v["splitter"]["t2"] = serde_json::json!(0.6);
    v["splitter"]["r2"] = serde_json::json!(0.5);
    std::fs::write(&cfg_path, v.to_string()).unwrap();
    let output = homcam()
        .arg("pipeline")
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("splitter"), "stderr: {stderr}");
}

#[test]
fn report_on_missing_file_exits_one() {
    let output = homcam()
        .arg("report")
        .arg("--results")
        .arg("/nonexistent/results.json")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn blend_study_runs_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let output = homcam()
        .args(["blend-study", "--seed", "5", "--samples", "5000"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(output.status.success());
    let payload: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("blend_study.json")).unwrap(),
    )
    .unwrap();
    let p = payload["spots"][0]["probability"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
}
