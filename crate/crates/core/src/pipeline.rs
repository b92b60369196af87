//! Config-driven orchestration: mix → pool → cka → fit → diffusion → render.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audio::{generate_sweep, AudioError, SweepConfig};
use crate::cka::{self, CkaConfig, CkaError, NoiseCkaRecord};
use crate::diffusion::{run_inter, run_intra, DiffusionConfig, DiffusionError, DiffusionReport};
use crate::par;
use crate::regression::{layers_from_records, profile_layers, FitMode, FitRecord, RegressionError};
use crate::report::{self, ReportError};
use crate::tensor::{pool_activations, read_embeddings, write_embeddings, ActivationsManifest, LayerInfo, PoolConfig, TensorError};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const RUN_SUMMARY_FILE: &str = "run_summary.json";
pub const MIXTURES_DIR: &str = "mixtures";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const CKA_FILE: &str = "cka.csv";
pub const CKA_PER_NOISE_FILE: &str = "cka_per_noise.csv";
pub const FIT_FILE: &str = "cka_fit.csv";
pub const DIFFUSION_DIR: &str = "diffusion";
pub const DIFFUSION_REPORT_FILE: &str = "diffusion_report.json";
pub const FIGURES_DIR: &str = "figures";
const DEFAULT_ACTIVATIONS_MANIFEST: &str = "activations_manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Mix,
    Pool,
    Cka,
    Fit,
    Diffusion,
    Render,
}

impl Stage {
    /// Dependency order.
    pub const ALL: [Stage; 6] = [Stage::Mix, Stage::Pool, Stage::Cka, Stage::Fit, Stage::Diffusion, Stage::Render];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Mix => "mix",
            Stage::Pool => "pool",
            Stage::Cka => "cka",
            Stage::Fit => "fit",
            Stage::Diffusion => "diffusion",
            Stage::Render => "render",
        }
    }

    fn stochastic(self) -> bool {
        matches!(self, Stage::Mix | Stage::Cka)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionMode {
    Intra,
    Inter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub clean: Option<PathBuf>,
    pub noise: Option<PathBuf>,
    pub activations: Option<PathBuf>,
    /// Defaults to `<activations>/activations_manifest.json`.
    pub activations_manifest: Option<PathBuf>,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { clean: None, noise: None, activations: None, activations_manifest: None, output: PathBuf::from("out") }
    }
}

/// Contents of a pipeline config file (UTF-8 JSON).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    /// Required whenever `mix` or `cka` runs.
    pub seed: Option<u64>,
    /// Worker threads; unset uses all cores.
    pub jobs: Option<usize>,
    pub stages: Vec<Stage>,
    pub paths: Paths,
    pub sweep: SweepConfig,
    pub pool: PoolConfig,
    pub cka: CkaConfig,
    pub fit_mode: FitMode,
    pub diffusion: DiffusionConfig,
    pub diffusion_modes: Vec<DiffusionMode>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: None,
            jobs: None,
            stages: Stage::ALL.to_vec(),
            paths: Paths::default(),
            sweep: SweepConfig::default(),
            pool: PoolConfig::default(),
            cka: CkaConfig::default(),
            fit_mode: FitMode::default(),
            diffusion: DiffusionConfig::default(),
            diffusion_modes: vec![DiffusionMode::Intra, DiffusionMode::Inter],
        }
    }
}

impl PipelineConfig {
    /// Reads a config file; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<PipelineConfig, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        for opt in [&mut p.clean, &mut p.noise, &mut p.activations, &mut p.activations_manifest] {
            if let Some(v) = opt.as_mut() {
                fix(v);
            }
        }
        fix(&mut p.output);
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| PipelineError::Config(e.to_string()))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    /// Requested stages in dependency order, without duplicates.
    pub fn ordered_stages(&self) -> Vec<Stage> {
        Stage::ALL.iter().copied().filter(|s| self.stages.contains(s)).collect()
    }

    pub fn activations_manifest(&self) -> Option<PathBuf> {
        self.paths
            .activations_manifest
            .clone()
            .or_else(|| self.paths.activations.as_ref().map(|a| a.join(DEFAULT_ACTIVATIONS_MANIFEST)))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})", self.schema_version));
        }
        let stages = self.ordered_stages();
        if stages.is_empty() {
            return bad("no stages requested".into());
        }
        if self.seed.is_none() {
            if let Some(s) = stages.iter().find(|s| s.stochastic()) {
                return bad(format!("stage {s} needs a seed (set \"seed\" or pass --seed)"));
            }
        }
        if self.jobs == Some(0) {
            return bad("jobs must be >= 1".into());
        }
        if stages.contains(&Stage::Mix) {
            if self.paths.clean.is_none() || self.paths.noise.is_none() {
                return bad("stage mix needs paths.clean and paths.noise".into());
            }
            self.sweep.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        if stages.contains(&Stage::Pool) && self.activations_manifest().is_none() {
            return bad("stage pool needs paths.activations or paths.activations_manifest".into());
        }
        if stages.contains(&Stage::Cka) {
            self.cka.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        if stages.contains(&Stage::Diffusion) {
            self.diffusion.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
            if self.diffusion_modes.is_empty() {
                return bad("diffusion_modes is empty".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum StageCause {
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Cka(#[from] CkaError),
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {cause}")]
    StageFailure { stage: Stage, cause: StageCause },
}

impl PipelineError {
    /// Process exit status: 1 for stage failures, 2 for config errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::StageFailure { .. } => 1,
        }
    }
}

fn io(path: &Path, source: std::io::Error) -> StageCause {
    StageCause::Io { path: path.display().to_string(), source }
}

fn require(path: &Path) -> Result<(), StageCause> {
    if path.exists() {
        Ok(())
    } else {
        Err(StageCause::MissingInput(path.display().to_string()))
    }
}

pub fn stage_mix(clean: &Path, noise: &Path, out_dir: &Path, sweep: &SweepConfig, seed: u64) -> Result<(), StageCause> {
    require(clean)?;
    require(noise)?;
    let manifest = generate_sweep(clean, noise, out_dir, sweep, seed)?;
    log::info!("mix: {} mixtures, {} recorded errors", manifest.entries.len(), manifest.errors.len());
    Ok(())
}

pub fn stage_pool(activations: &Path, manifest: &Path, pool: &PoolConfig, out_file: &Path) -> Result<(), StageCause> {
    require(manifest)?;
    let m = ActivationsManifest::read(manifest)?;
    let set = pool_activations(&m, activations, pool)?;
    log::info!("pool: {} embeddings over {} layers", set.len(), set.layers().len());
    write_embeddings(&set, out_file)?;
    Ok(())
}

/// Writes `out_csv` and a `cka_per_noise.csv` beside it.
pub fn stage_cka(embeddings: &Path, config: &CkaConfig, out_csv: &Path) -> Result<(), StageCause> {
    require(embeddings)?;
    let set = read_embeddings(embeddings)?;
    let points = cka::cka_grid(&set, config)?;
    cka::write_csv(&cka::records(&points, set.layers()), out_csv)?;
    let per_noise = out_csv.with_file_name(CKA_PER_NOISE_FILE);
    cka::write_csv(&cka::noise_records(&points), per_noise)?;
    Ok(())
}

/// `layers` supplies block and skip tags; without it they are recovered from the CSV.
pub fn stage_fit(cka_csv: &Path, layers: Option<Vec<LayerInfo>>, mode: FitMode, out_csv: &Path) -> Result<(), StageCause> {
    require(cka_csv)?;
    let records: Vec<cka::CkaRecord> = cka::read_csv(cka_csv)?;
    let per_noise_path = cka_csv.with_file_name(CKA_PER_NOISE_FILE);
    let per_noise: Vec<NoiseCkaRecord> = match mode {
        FitMode::PerNoiseMean => {
            require(&per_noise_path)?;
            cka::read_csv(&per_noise_path)?
        }
        FitMode::NoiseAveraged => Vec::new(),
    };
    let layers = layers.unwrap_or_else(|| layers_from_records(&records));
    let fits = profile_layers(&records, &per_noise, &layers, mode)?;
    let rows: Vec<FitRecord> = fits.iter().map(FitRecord::from).collect();
    cka::write_csv(&rows, out_csv)?;
    Ok(())
}

pub fn stage_diffusion(
    embeddings: &Path,
    config: &DiffusionConfig,
    modes: &[DiffusionMode],
    out_dir: &Path,
) -> Result<(), StageCause> {
    require(embeddings)?;
    let set = read_embeddings(embeddings)?;
    let centroids = set.centroids();
    let intra = if modes.contains(&DiffusionMode::Intra) {
        run_intra(&centroids, set.layers(), config, out_dir)?
    } else {
        Vec::new()
    };
    let inter = if modes.contains(&DiffusionMode::Inter) {
        run_inter(&centroids, set.layers(), config, out_dir)?
    } else {
        Vec::new()
    };
    fs::create_dir_all(out_dir).map_err(|e| io(out_dir, e))?;
    let report = DiffusionReport::new(config, &intra, &inter);
    if let Some(inter) = &report.inter {
        for ex in &inter.excluded {
            log::info!("diffusion: layer {} excluded from inter-layer maps ({})", ex.layer_id, ex.reason);
        }
    }
    report.write(&out_dir.join(DIFFUSION_REPORT_FILE))?;
    Ok(())
}

pub fn stage_render(input: &Path, out_dir: &Path) -> Result<(), StageCause> {
    let files = report::render_all(input, out_dir)?;
    log::info!("render: {} figures", files.len());
    Ok(())
}

/// Layer tags for the fit stage: embeddings header first, then the activations manifest.
fn fit_layers(config: &PipelineConfig) -> Option<Vec<LayerInfo>> {
    let emb = config.paths.output.join(EMBEDDINGS_FILE);
    if emb.exists() {
        if let Ok(set) = read_embeddings(&emb) {
            return Some(set.layers().to_vec());
        }
    }
    let m = config.activations_manifest()?;
    ActivationsManifest::read(m).ok().map(|m| m.ordered_layers())
}

fn run_stage(stage: Stage, config: &PipelineConfig) -> Result<(), StageCause> {
    let out = &config.paths.output;
    let seed = config.seed.unwrap_or_default();
    match stage {
        Stage::Mix => stage_mix(
            config.paths.clean.as_deref().expect("validated"),
            config.paths.noise.as_deref().expect("validated"),
            &out.join(MIXTURES_DIR),
            &config.sweep,
            seed,
        ),
        Stage::Pool => {
            let manifest = config.activations_manifest().expect("validated");
            let root = config
                .paths
                .activations
                .clone()
                .unwrap_or_else(|| manifest.parent().unwrap_or(Path::new("")).to_path_buf());
            stage_pool(&root, &manifest, &config.pool, &out.join(EMBEDDINGS_FILE))
        }
        Stage::Cka => {
            let cfg = CkaConfig { rng_seed: seed, ..config.cka.clone() };
            stage_cka(&out.join(EMBEDDINGS_FILE), &cfg, &out.join(CKA_FILE))
        }
        Stage::Fit => stage_fit(&out.join(CKA_FILE), fit_layers(config), config.fit_mode, &out.join(FIT_FILE)),
        Stage::Diffusion => {
            stage_diffusion(&out.join(EMBEDDINGS_FILE), &config.diffusion, &config.diffusion_modes, &out.join(DIFFUSION_DIR))
        }
        Stage::Render => stage_render(out, &out.join(FIGURES_DIR)),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Contents of `run_summary.json`; contains no timestamps so reruns compare equal.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub seed: Option<u64>,
    pub stages: Vec<Stage>,
    pub files: Vec<FileDigest>,
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// SHA-256 of every file under `root` except the run summary, sorted by path.
pub fn digest_tree(root: &Path) -> std::io::Result<Vec<FileDigest>> {
    let mut files = Vec::new();
    collect_files(root, &mut files)?;
    let mut digests = par::try_map(&files, |p| {
        let bytes = fs::read(p)?;
        let rel: Vec<String> = p
            .strip_prefix(root)
            .expect("under root")
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect();
        let sha: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        Ok::<_, std::io::Error>(FileDigest { path: rel.join("/"), sha256: sha, bytes: bytes.len() as u64 })
    })?;
    digests.retain(|d| d.path != RUN_SUMMARY_FILE);
    digests.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(digests)
}

fn partial_marker(out: &Path, stage: Stage) -> PathBuf {
    out.join(format!("{stage}.partial"))
}

/// Runs the requested stages in dependency order and writes `run_summary.json`.
///
/// A failing stage leaves its partial outputs in place next to a
/// `<stage>.partial` marker holding the error.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunSummary, PipelineError> {
    config.validate()?;
    let out = &config.paths.output;
    let fail = |stage: Stage, cause: StageCause| PipelineError::StageFailure { stage, cause };
    fs::create_dir_all(out).map_err(|e| fail(Stage::ALL[0], io(out, e)))?;
    let stages = config.ordered_stages();
    par::with_jobs(config.jobs, || {
        for &stage in &stages {
            let started = Instant::now();
            log::info!("stage {stage}: start ({} threads)", par::current_threads());
            let marker = partial_marker(out, stage);
            if let Err(cause) = run_stage(stage, config) {
                log::error!("stage {stage} failed: {cause}");
                // best effort: the error itself is what gets reported
                let _ = fs::write(&marker, format!("{cause}\n"));
                return Err(fail(stage, cause));
            }
            if marker.exists() {
                fs::remove_file(&marker).map_err(|e| fail(stage, io(&marker, e)))?;
            }
            log::info!("stage {stage}: done in {:.2?}", started.elapsed());
        }
        Ok(())
    })?;

    let last = *stages.last().expect("validated");
    let files = digest_tree(out).map_err(|e| fail(last, io(out, e)))?;
    let summary = RunSummary { schema_version: CONFIG_SCHEMA_VERSION, seed: config.seed, stages, files };
    let path = out.join(RUN_SUMMARY_FILE);
    let mut text = serde_json::to_string_pretty(&summary).expect("serialisable");
    text.push('\n');
    fs::write(&path, text).map_err(|e| fail(last, io(&path, e)))?;
    Ok(summary)
}
