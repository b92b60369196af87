//! Command-line front end of the `snrprobe` binary.
//!
//! Every subcommand can start from a `--config` file; its flags override the
//! corresponding config values. Exit status is 0 on success, 1 when a stage
//! fails and 2 for configuration or usage errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::cka::CkaRows;
use crate::diffusion::Epsilon;
use crate::fixture;
use crate::par;
use crate::pipeline::{
    self, DiffusionMode, PipelineConfig, PipelineError, Stage, StageCause, CKA_FILE, DIFFUSION_DIR, EMBEDDINGS_FILE,
    FIGURES_DIR, FIT_FILE, MIXTURES_DIR,
};
use crate::regression::FitMode;
use crate::tensor::ActivationsManifest;

#[derive(Debug, Parser)]
#[command(name = "snrprobe", version, about = "Probe how layer representations degrade across an SNR sweep")]
pub struct Cli {
    /// Pipeline config (JSON); relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for the stochastic stages (mix, cka).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate loudness-normalised noisy mixtures over the SNR grid.
    Mix(MixArgs),
    /// Pool stored activations into per-utterance embeddings.
    Pool(PoolArgs),
    /// Linear CKA between clean and noisy embeddings per layer and SNR.
    Cka(CkaArgs),
    /// Per-layer linear fits of CKA against SNR.
    Fit(FitArgs),
    /// Diffusion maps within and across layers.
    Diffusion(DiffusionArgs),
    /// Render SVG figures from the CSV outputs.
    Render(RenderArgs),
    /// Run the configured stages in order.
    Run,
    /// Write the bundled synthetic inputs and a matching config.
    Fixture(FixtureArgs),
}

#[derive(Debug, Args)]
pub struct MixArgs {
    #[arg(long)]
    pub clean: Option<PathBuf>,
    #[arg(long)]
    pub noise: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub snr_min: Option<i32>,
    #[arg(long, allow_hyphen_values = true)]
    pub snr_max: Option<i32>,
    #[arg(long, allow_hyphen_values = true)]
    pub lufs: Option<f64>,
    #[arg(long)]
    pub clip_s: Option<f64>,
    #[arg(long)]
    pub window_s: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PoolArgs {
    #[arg(long)]
    pub activations: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RowsArg {
    Utterances,
    Centroids,
}

#[derive(Debug, Args)]
pub struct CkaArgs {
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Bootstrap resamples over noise types.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub ci_level: Option<f64>,
    #[arg(long, value_enum)]
    pub rows: Option<RowsArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FitModeArg {
    NoiseAveraged,
    PerNoiseMean,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub cka: Option<PathBuf>,
    /// Activations manifest supplying block and skip tags.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<FitModeArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Intra,
    Inter,
    Both,
}

#[derive(Debug, Args)]
pub struct DiffusionArgs {
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Kernel bandwidth: `median` or a positive number.
    #[arg(long, value_parser = parse_epsilon)]
    pub epsilon: Option<Epsilon>,
    #[arg(long)]
    pub coords: Option<usize>,
    #[arg(long)]
    pub time: Option<u32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Directory holding cka.csv, cka_fit.csv and diffusion/.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_epsilon(s: &str) -> Result<Epsilon, String> {
    if s.eq_ignore_ascii_case("median") {
        return Ok(Epsilon::Median);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(Epsilon::Fixed(v)),
        _ => Err(format!("expected `median` or a positive number, got {s:?}")),
    }
}

fn config_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

fn pick(flag: Option<PathBuf>, fallback: Option<PathBuf>, name: &str) -> Result<PathBuf, PipelineError> {
    flag.or(fallback).ok_or_else(|| config_err(format!("--{name} is required (or set it in --config)")))
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.jobs.is_some() {
        cfg.jobs = cli.jobs;
    }
    if cfg.jobs == Some(0) {
        return Err(config_err("--jobs must be >= 1"));
    }
    Ok(cfg)
}

fn stage<F>(cfg: &PipelineConfig, stage: Stage, f: F) -> Result<(), PipelineError>
where
    F: FnOnce() -> Result<(), StageCause> + Send,
{
    par::with_jobs(cfg.jobs, f).map_err(|cause| PipelineError::StageFailure { stage, cause })
}

fn seed(cfg: &PipelineConfig, s: Stage) -> Result<u64, PipelineError> {
    cfg.seed.ok_or_else(|| config_err(format!("stage {s} needs a seed (pass --seed or set it in --config)")))
}

/// Executes a parsed command line.
pub fn execute(cli: Cli) -> Result<(), PipelineError> {
    if let Command::Fixture(args) = &cli.command {
        let seed = cli.seed.unwrap_or(7);
        fixture::write_fixture(&args.out, seed)?;
        log::info!("fixture written; run with --config {}", args.out.join(fixture::FIXTURE_CONFIG).display());
        return Ok(());
    }
    let mut cfg = load_config(&cli)?;
    let out_root = cfg.paths.output.clone();
    let under = |name: &str| Some(out_root.join(name));
    match cli.command {
        Command::Mix(a) => {
            let s = seed(&cfg, Stage::Mix)?;
            let clean = pick(a.clean, cfg.paths.clean.clone(), "clean")?;
            let noise = pick(a.noise, cfg.paths.noise.clone(), "noise")?;
            let out = pick(a.out, under(MIXTURES_DIR), "out")?;
            let sw = &mut cfg.sweep;
            if a.snr_min.is_some() || a.snr_max.is_some() {
                let lo = a.snr_min.unwrap_or(*sw.snr_grid_db.first().unwrap_or(&-10));
                let hi = a.snr_max.unwrap_or(*sw.snr_grid_db.last().unwrap_or(&30));
                sw.snr_grid_db = (lo..=hi).collect();
            }
            if let Some(v) = a.lufs {
                sw.target_lufs = v;
            }
            if let Some(v) = a.clip_s {
                sw.clip_duration_s = v;
            }
            if let Some(v) = a.window_s {
                sw.window_duration_s = v;
            }
            sw.validate().map_err(|e| config_err(e.to_string()))?;
            stage(&cfg, Stage::Mix, || pipeline::stage_mix(&clean, &noise, &out, &cfg.sweep, s))
        }
        Command::Pool(a) => {
            let manifest = pick(a.manifest, cfg.activations_manifest(), "manifest")?;
            let root = a
                .activations
                .or_else(|| cfg.paths.activations.clone())
                .unwrap_or_else(|| manifest.parent().unwrap_or(Path::new("")).to_path_buf());
            let out = pick(a.out, under(EMBEDDINGS_FILE), "out")?;
            stage(&cfg, Stage::Pool, || pipeline::stage_pool(&root, &manifest, &cfg.pool, &out))
        }
        Command::Cka(a) => {
            let s = seed(&cfg, Stage::Cka)?;
            let emb = pick(a.embeddings, under(EMBEDDINGS_FILE), "embeddings")?;
            let out = pick(a.out, under(CKA_FILE), "out")?;
            if let Some(b) = a.bootstrap {
                cfg.cka.bootstrap_resamples = b;
            }
            if let Some(c) = a.ci_level {
                cfg.cka.ci_level = c;
            }
            if let Some(r) = a.rows {
                cfg.cka.rows = match r {
                    RowsArg::Utterances => CkaRows::Utterances,
                    RowsArg::Centroids => CkaRows::Centroids,
                };
            }
            cfg.cka.rng_seed = s;
            cfg.cka.validate().map_err(|e| config_err(e.to_string()))?;
            stage(&cfg, Stage::Cka, || pipeline::stage_cka(&emb, &cfg.cka, &out))
        }
        Command::Fit(a) => {
            let cka = pick(a.cka, under(CKA_FILE), "cka")?;
            let out = pick(a.out, under(FIT_FILE), "out")?;
            let mode = match a.mode {
                Some(FitModeArg::NoiseAveraged) => FitMode::NoiseAveraged,
                Some(FitModeArg::PerNoiseMean) => FitMode::PerNoiseMean,
                None => cfg.fit_mode,
            };
            let manifest = a.manifest.or_else(|| cfg.activations_manifest().filter(|p| p.exists()));
            stage(&cfg, Stage::Fit, || {
                let layers = match manifest {
                    Some(m) => Some(ActivationsManifest::read(m)?.ordered_layers()),
                    None => None,
                };
                pipeline::stage_fit(&cka, layers, mode, &out)
            })
        }
        Command::Diffusion(a) => {
            let emb = pick(a.embeddings, under(EMBEDDINGS_FILE), "embeddings")?;
            let out = pick(a.out, under(DIFFUSION_DIR), "out")?;
            let d = &mut cfg.diffusion;
            if let Some(e) = a.epsilon {
                d.epsilon = e;
            }
            if let Some(k) = a.coords {
                d.n_coords = k;
            }
            if let Some(t) = a.time {
                d.time = t;
            }
            d.validate().map_err(|e| config_err(e.to_string()))?;
            let modes = match a.mode {
                Some(ModeArg::Intra) => vec![DiffusionMode::Intra],
                Some(ModeArg::Inter) => vec![DiffusionMode::Inter],
                Some(ModeArg::Both) => vec![DiffusionMode::Intra, DiffusionMode::Inter],
                None => cfg.diffusion_modes.clone(),
            };
            stage(&cfg, Stage::Diffusion, || pipeline::stage_diffusion(&emb, &cfg.diffusion, &modes, &out))
        }
        Command::Render(a) => {
            let input = a.input.unwrap_or(out_root);
            let out = a.out.unwrap_or_else(|| input.join(FIGURES_DIR));
            stage(&cfg, Stage::Render, || pipeline::stage_render(&input, &out))
        }
        Command::Run => {
            if cli.config.is_none() {
                return Err(config_err("run needs --config"));
            }
            let summary = pipeline::run_pipeline(&cfg)?;
            log::info!("run complete: {} files hashed", summary.files.len());
            Ok(())
        }
        Command::Fixture(_) => unreachable!("handled above"),
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    // a second init (tests) is harmless
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().format_timestamp(None).try_init();
}

/// Parses `args`, runs the command and maps the outcome to an exit status.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // clap uses 0 for --help/--version and 2 for usage errors
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    init_logging(cli.verbose);
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("snrprobe: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
