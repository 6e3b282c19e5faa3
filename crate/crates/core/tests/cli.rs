use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vimu::harness::{ExperimentConfig, MetricsReport};

fn vimu(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vimu"));
    cmd.args(args).env_remove("VIMU_SEED");
    if let Some(s) = seed_env {
        cmd.env("VIMU_SEED", s);
    }
    cmd.output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Two-subject synthetic dataset and a config small enough to run in seconds.
fn tiny(root: &Path) -> (PathBuf, PathBuf) {
    let data = root.join("data");
    let out = vimu(&["synth", "--out", s(&data), "--subjects", "2", "--trials", "4"], None);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut cfg = ExperimentConfig::desk();
    cfg.dataset = data.clone();
    cfg.gan.epochs = 1;
    cfg.gan_max_pairs = Some(128);
    cfg.clf.epochs = 2;
    cfg.clf.schedule.decay_epochs = vec![1];
    cfg.seed = 100;
    let path = root.join("config.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    (data, path)
}

fn report(dir: &Path) -> MetricsReport {
    MetricsReport::from_json(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&vimu(&["--help"], None)), 0);
    assert_eq!(code(&vimu(&["run", "--help"], None)), 0);
    assert_eq!(code(&vimu(&[], None)), 1);
    assert_eq!(code(&vimu(&["frobnicate"], None)), 1);
    assert_eq!(code(&vimu(&["run", "--seed", "minus-one"], None)), 1);
    assert_eq!(code(&vimu(&["run", "--preset", "desk", "--arms", "telepathy"], None)), 1);
    assert_eq!(code(&vimu(&["run", "--preset", "desk"], Some("not-a-number"))), 1);
}

#[test]
fn missing_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = vimu(&["run", "--preset", "desk", "--dataset", s(&dir.path().join("nowhere"))], None);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest.json"));
}

#[test]
fn wrong_profile_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = tiny(dir.path());
    let out = vimu(&["preprocess", "--config", s(&cfg), "--profile", "ninapro_db5", "--output", s(&dir.path().join("o"))], None);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn seed_precedence_file_env_flag() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = tiny(dir.path());
    let run = |name: &str, env: Option<&str>, flag: Option<&str>| {
        let out_dir = dir.path().join(name);
        let mut args = vec!["run", "--config", s(&cfg), "--output", s(&out_dir), "--arms", "unimodal"];
        if let Some(f) = flag {
            args.extend(["--seed", f]);
        }
        let out = vimu(&args, env);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        report(&out_dir).seed
    };
    assert_eq!(run("file", None, None), 100);
    assert_eq!(run("env", Some("7"), None), 7);
    assert_eq!(run("flag", Some("7"), Some("9")), 9);
}

#[test]
fn staged_commands_match_the_artifacts_of_run() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = tiny(dir.path());
    let out_dir = dir.path().join("staged");
    let base = ["--config", s(&cfg), "--output", s(&out_dir)];
    for cmd in ["preprocess", "train-gan", "generate-imu", "train-clf", "evaluate"] {
        let mut args = vec![cmd];
        args.extend(base);
        let out = vimu(&args, None);
        assert_eq!(code(&out), 0, "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for f in [
        "preprocess.json",
        "generator.ckpt",
        "generator.ckpt.json",
        "discriminator.ckpt",
        "virtual_imu.csv",
        "clf_unimodal_s002.ckpt",
        "clf_virtual_multimodal_s002.ckpt",
        "clf_real_multimodal_s002.ckpt",
        "predictions_unimodal.csv",
        "report.json",
        "report.csv",
    ] {
        assert!(out_dir.join(f).is_file(), "{f} missing");
    }
    let staged = report(&out_dir);
    assert_eq!(staged.arms.len(), 3);
    assert!(staged.generator.is_none());

    // the one-shot pipeline trains the same models from the same seeds
    let run_dir = dir.path().join("run");
    let out = vimu(&["run", "--config", s(&cfg), "--output", s(&run_dir)], None);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["generator.ckpt", "clf_unimodal_s002.ckpt", "clf_virtual_multimodal_s002.ckpt"] {
        assert_eq!(std::fs::read(out_dir.join(f)).unwrap(), std::fs::read(run_dir.join(f)).unwrap(), "{f}");
    }
    let full = report(&run_dir);
    for (a, b) in staged.arms.iter().zip(&full.arms) {
        assert_eq!(a, b);
    }
    assert!(run_dir.join("report.svg").is_file());
}

#[test]
fn report_command_renders_several_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = tiny(dir.path());
    let mut inputs = Vec::new();
    for seed in ["1", "2"] {
        let out_dir = dir.path().join(seed);
        let out = vimu(&["run", "--config", s(&cfg), "--output", s(&out_dir), "--seed", seed, "--arms", "unimodal,real_multimodal"], None);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        inputs.push(out_dir.join("report.json"));
    }
    let rendered = dir.path().join("rendered");
    let mut args = vec!["report", "--out", s(&rendered), "--formats", "csv,svg", "--input"];
    args.extend(inputs.iter().map(|p| s(p)));
    let out = vimu(&args, None);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(rendered.join("report.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.starts_with("database,")).count(), 1);
    // one row per (run, arm, subject)
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    let svg = std::fs::read_to_string(rendered.join("report.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert!(!rendered.join("report.json").exists());

    let out = vimu(&["report", "--out", s(&rendered), "--formats", "pdf", "--input", s(&inputs[0])], None);
    assert_eq!(code(&out), 1);
}
