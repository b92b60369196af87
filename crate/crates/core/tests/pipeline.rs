use std::fs;
use std::path::{Path, PathBuf};

use snrprobe::cka::{read_csv, write_csv, CkaRecord};
use snrprobe::fixture::{write_activation_fixture, ActivationFixture};
use snrprobe::pipeline::{
    digest_tree, run_pipeline, PipelineConfig, PipelineError, Stage, StageCause, CKA_FILE, EMBEDDINGS_FILE, FIT_FILE,
    RUN_SUMMARY_FILE,
};
use snrprobe::regression::FitRecord;

fn small_fixture(root: &Path) -> PipelineConfig {
    let spec = ActivationFixture { snr_grid_db: (-10..=30).step_by(5).collect(), ..Default::default() };
    let act = root.join("activations");
    write_activation_fixture(&act, &spec).unwrap();
    let mut cfg = PipelineConfig { seed: Some(5), ..Default::default() };
    cfg.stages = vec![Stage::Pool, Stage::Cka, Stage::Fit, Stage::Diffusion, Stage::Render];
    cfg.paths.activations = Some(act);
    cfg.paths.output = root.join("out");
    cfg.cka.bootstrap_resamples = 200;
    cfg
}

fn read(p: PathBuf) -> Vec<u8> {
    fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn fit_stage_runs_in_isolation() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_fixture(dir.path());
    run_pipeline(&cfg).unwrap();
    let out = cfg.paths.output.clone();
    let emb = read(out.join(EMBEDDINGS_FILE));
    let cka = read(out.join(CKA_FILE));
    let fit = read(out.join(FIT_FILE));
    fs::remove_file(out.join(FIT_FILE)).unwrap();

    cfg.stages = vec![Stage::Fit];
    cfg.seed = None;
    let summary = run_pipeline(&cfg).unwrap();
    assert_eq!(summary.stages, [Stage::Fit]);
    assert_eq!(read(out.join(FIT_FILE)), fit);
    assert_eq!(read(out.join(CKA_FILE)), cka);
    assert_eq!(read(out.join(EMBEDDINGS_FILE)), emb);
}

#[test]
fn missing_embeddings_is_a_cka_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_fixture(dir.path());
    cfg.stages = vec![Stage::Cka, Stage::Fit];
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(
        matches!(err, PipelineError::StageFailure { stage: Stage::Cka, cause: StageCause::MissingInput(_) }),
        "{err}"
    );
    assert_eq!(err.exit_code(), 1);
    let marker = cfg.paths.output.join("cka.partial");
    assert!(marker.exists());
    assert!(!cfg.paths.output.join(FIT_FILE).exists());

    // a later successful run clears the marker
    cfg.stages = vec![Stage::Pool, Stage::Cka];
    run_pipeline(&cfg).unwrap();
    assert!(!marker.exists());
}

#[test]
fn summary_hashes_match_disk_and_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_fixture(dir.path());
    let first = run_pipeline(&cfg).unwrap();
    let on_disk = digest_tree(&cfg.paths.output).unwrap();
    assert_eq!(first.files, on_disk);
    assert!(first.files.iter().all(|f| f.path != RUN_SUMMARY_FILE));
    let summary_bytes = read(cfg.paths.output.join(RUN_SUMMARY_FILE));
    let second = run_pipeline(&cfg).unwrap();
    assert_eq!(first, second);
    assert_eq!(read(cfg.paths.output.join(RUN_SUMMARY_FILE)), summary_bytes);
}

#[test]
fn outputs_parse_strictly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_fixture(dir.path());
    let summary = run_pipeline(&cfg).unwrap();
    let out = &cfg.paths.output;

    let svgs: Vec<_> = summary.files.iter().filter(|f| f.path.ends_with(".svg")).collect();
    assert!(svgs.len() >= 4, "{} figures", svgs.len());
    for f in svgs {
        let text = fs::read_to_string(out.join(&f.path)).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", f.path));
        assert_eq!(doc.root_element().tag_name().name(), "svg");
    }

    // CSV round trip through the typed readers reproduces the bytes
    let records: Vec<CkaRecord> = read_csv(out.join(CKA_FILE)).unwrap();
    assert_eq!(records.len(), 12 * 9);
    assert!(records.iter().all(|r| 0.0 <= r.ci_low && r.ci_low <= r.cka && r.cka <= r.ci_high && r.ci_high <= 1.0));
    let copy = dir.path().join("copy.csv");
    write_csv(&records, &copy).unwrap();
    assert_eq!(read(copy.clone()), read(out.join(CKA_FILE)));
    let fits: Vec<FitRecord> = read_csv(out.join(FIT_FILE)).unwrap();
    write_csv(&fits, &copy).unwrap();
    assert_eq!(read(copy), read(out.join(FIT_FILE)));
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_fixture(dir.path());
    cfg.jobs = Some(1);
    let one = run_pipeline(&cfg).unwrap();
    cfg.jobs = Some(4);
    cfg.paths.output = dir.path().join("out4");
    let four = run_pipeline(&cfg).unwrap();
    assert_eq!(one.files, four.files);
}
