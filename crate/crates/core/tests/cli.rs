use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn snrprobe(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snrprobe")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn usage_and_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&snrprobe(&["frobnicate"], dir.path())), 2);
    assert_eq!(code(&snrprobe(&["run"], dir.path())), 2);
    // cka without a seed
    assert_eq!(code(&snrprobe(&["cka", "--embeddings", "e.bin"], dir.path())), 2);
    fs::write(dir.path().join("bad.json"), "{ not json").unwrap();
    assert_eq!(code(&snrprobe(&["run", "--config", "bad.json"], dir.path())), 2);
    fs::write(dir.path().join("old.json"), r#"{"schema_version": 0, "seed": 1}"#).unwrap();
    assert_eq!(code(&snrprobe(&["run", "--config", "old.json"], dir.path())), 2);
    assert_eq!(code(&snrprobe(&["--help"], dir.path())), 0);
}

#[test]
fn stage_failure_exits_1_and_logs_to_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let o = snrprobe(&["cka", "--seed", "1", "--embeddings", "missing.bin", "--out", "cka.csv"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(o.stdout.is_empty());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("stage cka failed") && err.contains("missing input"), "{err}");
}

#[test]
fn stage_commands_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&snrprobe(&["fixture", "--out", "fx"], d)), 0);
    assert!(d.join("fx/pipeline.json").exists());

    let steps: [&[&str]; 5] = [
        &["pool", "--activations", "fx/activations", "--manifest", "fx/activations/activations_manifest.json", "--out", "o/embeddings.bin"],
        &["cka", "--seed", "3", "--jobs", "2", "--embeddings", "o/embeddings.bin", "--out", "o/cka.csv", "--bootstrap", "100"],
        &["fit", "--cka", "o/cka.csv", "--manifest", "fx/activations/activations_manifest.json", "--out", "o/cka_fit.csv", "--mode", "per-noise-mean"],
        &["diffusion", "--embeddings", "o/embeddings.bin", "--mode", "both", "--epsilon", "median", "--coords", "3", "--time", "2", "--out", "o/diffusion"],
        &["render", "--input", "o", "--out", "o/figures"],
    ];
    for args in steps {
        let o = snrprobe(args, d);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(o.stdout.is_empty(), "machine output belongs in files");
    }
    for f in ["o/cka.csv", "o/cka_per_noise.csv", "o/cka_fit.csv", "o/diffusion/diffusion_report.json", "o/figures/cka_heatmap.svg"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let fit = fs::read_to_string(d.join("o/cka_fit.csv")).unwrap();
    // skip tags come from the manifest
    assert!(fit.lines().any(|l| l.starts_with("enc1.1,") && l.contains(",true,false,")), "{fit}");
}

#[test]
fn run_with_config_and_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&snrprobe(&["fixture", "--out", "fx", "--seed", "9"], d)), 0);
    let o = snrprobe(&["run", "--config", "fx/pipeline.json", "--jobs", "2", "-v"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage render"));
    let summary = fs::read_to_string(d.join("fx/out/run_summary.json")).unwrap();
    assert!(summary.contains("\"seed\": 9"));
    assert!(summary.contains("mixtures/manifest.json"));

    // a stage command reads defaults from the config and writes under its output dir
    let o = snrprobe(&["diffusion", "--config", "fx/pipeline.json", "--mode", "intra", "--out", "alt"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("alt/diffusion_intra.csv").exists());
    assert!(!d.join("alt/diffusion_inter_to_clean.csv").exists());
}
