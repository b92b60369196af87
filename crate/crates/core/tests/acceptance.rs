//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Every check compares against a quantity
//! computed independently here, never against the crate's own output alone.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use snrprobe::audio::{center_trim, generate_sweep, measure_lufs, read_wav, MixtureManifest, SweepConfig, MANIFEST_FILE};
use snrprobe::cka::{linear_cka, CkaRecord};
use snrprobe::diffusion::{
    diffusion_distances, diffusion_map, gaussian_affinity, intra_layer, markov_normalize, pairwise_sq_dists,
    DiffusionConfig, DiffusionReport, Epsilon,
};
use snrprobe::fixture::{self, fixture_layers, write_activation_fixture, write_audio_fixture, ActivationFixture};
use snrprobe::pipeline::{self, PipelineConfig, Stage, RunSummary};
use snrprobe::regression::FitRecord;
use snrprobe::report::read_matrix_csv;
use snrprobe::tensor::CellKey;
use snrprobe::{AudioClip, CentroidSet};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_time(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || format!("took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64()))
}

fn power(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64
}

fn mixing_exactness() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let audio = write_audio_fixture(&dir.path().join("in"), 11).map_err(|e| e.to_string())?;
    let out = dir.path().join("mix");
    let cfg = SweepConfig::default();
    let started = Instant::now();
    generate_sweep(&audio.clean_dir, &audio.noise_dir, &out, &cfg, 11).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let manifest = MixtureManifest::read(out.join(MANIFEST_FILE)).map_err(|e| e.to_string())?;
    ensure(manifest.errors.is_empty(), || format!("sweep recorded errors: {:?}", manifest.errors))?;
    ensure(manifest.entries.len() == 2 * 2 * 41, || format!("{} mixtures, expected 164", manifest.entries.len()))?;

    let mut worst_snr = 0.0f64;
    let mut worst_lufs = 0.0f64;
    for e in &manifest.entries {
        let clean = read_wav(audio.clean_dir.join(format!("{}.wav", e.utterance_id))).map_err(|e| e.to_string())?;
        let clean = center_trim(&clean, cfg.clip_duration_s).map_err(|e| e.to_string())?.clip;
        let mix = read_wav(out.join(&e.path)).map_err(|e| e.to_string())?;
        ensure(mix.len() == clean.len(), || format!("{}: length {} vs {}", e.path, mix.len(), clean.len()))?;
        // noise component = mixture minus the gained clean signal
        let signal: Vec<f64> = clean.samples().iter().map(|s| s * e.post_gain).collect();
        let noise: Vec<f64> = mix.samples().iter().zip(&signal).map(|(m, s)| m - s).collect();
        let snr = 10.0 * (power(&signal) / power(&noise)).log10();
        worst_snr = worst_snr.max((snr - f64::from(e.target_snr_db)).abs());
        let lufs = measure_lufs(&mix).map_err(|e| e.to_string())?;
        worst_lufs = worst_lufs.max((lufs - cfg.target_lufs).abs());
    }
    ensure(worst_snr <= 0.01, || format!("max SNR error {worst_snr:.4} dB"))?;
    ensure(worst_lufs <= 0.1, || format!("max loudness error {worst_lufs:.4} LU"))?;
    within_time(elapsed, 30.0)?;
    Ok(format!(
        "164 mixtures, max |SNR err| {worst_snr:.2e} dB, max |LUFS err| {worst_lufs:.2e} LU, sweep {:.2} s",
        elapsed.as_secs_f64()
    ))
}

fn loudness_conformance() -> Outcome {
    let rate = 16_000u32;
    let sine: Vec<f64> =
        (0..rate as usize * 10).map(|i| (std::f64::consts::TAU * 997.0 * i as f64 / f64::from(rate)).sin()).collect();
    let lufs = measure_lufs(&AudioClip::new(sine, rate).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure((lufs + 3.01).abs() <= 0.1, || format!("measured {lufs:.4} LUFS"))?;
    Ok(format!("997 Hz full-scale sine at 16 kHz: {lufs:.4} LUFS"))
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    random_matrix(rng, d, d).qr().q()
}

/// HSIC(K, L) = tr(K H L H) with explicit centring matrix H.
fn hsic(k: &DMatrix<f64>, l: &DMatrix<f64>) -> f64 {
    let n = k.nrows();
    let h = DMatrix::<f64>::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    (k * &h * l * &h).trace()
}

fn gram_cka(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let k = x * x.transpose();
    let l = y * y.transpose();
    hsic(&k, &l) / (hsic(&k, &k) * hsic(&l, &l)).sqrt()
}

fn cka_correctness() -> Outcome {
    let started = Instant::now();
    let cka = |x: &DMatrix<f64>, y: &DMatrix<f64>| linear_cka(x, y).map_err(|e| e.to_string());
    let mut worst = [0.0f64; 5];
    let cases = 120;
    for case in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let n = rng.gen_range(4..24);
        // both the feature-space and the Gram-space code paths
        let d1 = rng.gen_range(1..40);
        let d2 = rng.gen_range(1..40);
        let x = random_matrix(&mut rng, n, d1);
        let y = random_matrix(&mut rng, n, d2);
        let base = cka(&x, &y)?;
        ensure((0.0..=1.0).contains(&base), || format!("case {case}: cka {base} outside [0, 1]"))?;
        worst[0] = worst[0].max((cka(&x, &x)? - 1.0).abs());
        worst[1] = worst[1].max((cka(&y, &x)? - base).abs());
        let q = random_orthogonal(&mut rng, d2);
        worst[2] = worst[2].max((cka(&x, &(&y * q))? - base).abs());
        for beta in [1e-3, 1.0, 1e3] {
            worst[3] = worst[3].max((cka(&x, &(&y * beta))? - base).abs());
        }
        let offset: Vec<f64> = (0..d2).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let shifted = DMatrix::from_fn(n, d2, |i, j| y[(i, j)] + offset[j]);
        worst[4] = worst[4].max((cka(&x, &shifted)? - base).abs());
    }
    let limits = [1e-10, 1e-12, 1e-10, 1e-12, 1e-12];
    let names = ["self-similarity", "symmetry", "orthogonal invariance", "scale invariance", "translation invariance"];
    for ((w, l), name) in worst.iter().zip(limits).zip(names) {
        ensure(*w <= l, || format!("{name}: max deviation {w:e} > {l:e}"))?;
    }

    let mut oracle_gap = 0.0f64;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_matrix(&mut rng, 8, 5);
        let y = random_matrix(&mut rng, 8, 5);
        oracle_gap = oracle_gap.max((cka(&x, &y)? - gram_cka(&x, &y)).abs());
    }
    ensure(oracle_gap <= 1e-12, || format!("Gram/HSIC oracle gap {oracle_gap:e}"))?;
    let single = cka(&DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]), &DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 4.0]))?;
    // squared Pearson correlation of (1,2,3) and (1,2,4) is 27/28
    ensure((single - 27.0 / 28.0).abs() <= 1e-12, || format!("single-column case {single}"))?;
    within_time(started.elapsed(), 5.0)?;
    Ok(format!(
        "{cases} random cases, max deviations {:.1e}/{:.1e}/{:.1e}/{:.1e}/{:.1e}, Gram oracle gap {oracle_gap:.1e}",
        worst[0], worst[1], worst[2], worst[3], worst[4]
    ))
}

/// D_t(i, j)² = Σ_k (P^t[i,k] − P^t[j,k])² / π_k, from a kernel built here.
fn probability_cloud_distances(points: &DMatrix<f64>, eps: f64, t: u32) -> DMatrix<f64> {
    let n = points.nrows();
    let w = DMatrix::from_fn(n, n, |i, j| (-(points.row(i) - points.row(j)).norm_squared() / eps).exp());
    let deg: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    let total: f64 = deg.iter().sum();
    let p = DMatrix::from_fn(n, n, |i, j| w[(i, j)] / deg[i]);
    let mut pt = DMatrix::<f64>::identity(n, n);
    for _ in 0..t {
        pt = &pt * &p;
    }
    DMatrix::from_fn(n, n, |i, j| {
        (0..n).map(|k| (pt[(i, k)] - pt[(j, k)]).powi(2) / (deg[k] / total)).sum::<f64>().sqrt()
    })
}

fn diffusion_oracle() -> Outcome {
    let started = Instant::now();
    let mut worst_gap = 0.0f64;
    let mut worst_row = 0.0f64;
    let mut runs = 0;
    for n in [8usize, 12, 16] {
        for seed in 0..3u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64 * 100 + seed);
            let points = random_matrix(&mut rng, n, 3);
            let d2 = pairwise_sq_dists(&points);
            let eps = 0.5;
            let (p, _) = markov_normalize(&gaussian_affinity(&d2, eps).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            for i in 0..n {
                worst_row = worst_row.max((p.row(i).sum() - 1.0).abs());
            }
            for t in [1u32, 2] {
                let cfg = DiffusionConfig { epsilon: Epsilon::Fixed(eps), n_coords: n - 1, time: t, ..Default::default() };
                let labels = (0..n).map(|i| i.to_string()).collect();
                let emb = diffusion_map(&points, labels, &cfg).map_err(|e| e.to_string())?;
                ensure(emb.eigenvalues.len() == n - 1, || format!("n={n}: {} coordinates kept", emb.eigenvalues.len()))?;
                // the dropped pair is the constant one: every kept ψ is π-orthogonal to 1
                for c in 0..n - 1 {
                    let m: f64 = (0..n).map(|i| emb.stationary[i] * emb.psi[(i, c)]).sum();
                    ensure(m.abs() <= 1e-8, || format!("n={n}: coordinate {c} has π-mean {m:e}"))?;
                    ensure(emb.eigenvalues[c] < 1.0 - 1e-9, || format!("n={n}: kept eigenvalue {}", emb.eigenvalues[c]))?;
                }
                let spectral = diffusion_distances(&emb).values;
                let oracle = probability_cloud_distances(&points, eps, t);
                worst_gap = worst_gap.max((spectral - oracle).amax());
                runs += 1;
            }
        }
    }
    ensure(worst_row <= 1e-12, || format!("Markov row sums off by {worst_row:e}"))?;
    ensure(worst_gap <= 1e-8, || format!("spectral vs probability-cloud gap {worst_gap:e}"))?;
    within_time(started.elapsed(), 5.0)?;
    Ok(format!("{runs} clouds, max distance gap {worst_gap:.1e}, max row-sum error {worst_row:.1e}"))
}

fn trajectory_family(layers: &[(String, Box<dyn Fn(f64) -> Vec<f64>>)]) -> CentroidSet {
    let mut c = CentroidSet::default();
    for (id, f) in layers {
        for s in -10..=30 {
            c.insert(CellKey::noisy(id, "n", s), f(f64::from(s)));
        }
    }
    c
}

fn dc1_trajectories() -> Outcome {
    let started = Instant::now();
    let grid: Vec<i32> = (-10..=30).collect();
    let cfg = DiffusionConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut linear: Vec<(String, Box<dyn Fn(f64) -> Vec<f64>>)> = Vec::new();
    for k in 0..6 {
        let dir: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let origin: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let scale = 0.05 * (k + 1) as f64;
        linear.push((
            format!("line{k}"),
            Box::new(move |s| origin.iter().zip(&dir).map(|(o, d)| o + scale * d * s).collect()),
        ));
    }
    let curved: Vec<(String, Box<dyn Fn(f64) -> Vec<f64>>)> = vec![
        ("square".into(), Box::new(|s| vec![(s + 10.0) / 40.0, ((s + 10.0) / 40.0).powi(2)])),
        ("exp".into(), Box::new(|s| vec![(s / 10.0).exp(), 0.3 * s / 10.0])),
        ("cubic".into(), Box::new(|s| { let u = (s - 10.0) / 20.0; vec![u, u.powi(3), 0.5] })),
    ];
    let mut min_r2 = f64::INFINITY;
    let lines = trajectory_family(&linear);
    for (id, _) in &linear {
        let r = intra_layer(&lines, id, &grid, &cfg).map_err(|e| e.to_string())?;
        ensure(r.rho == 1.0, || format!("{id}: rho {}", r.rho))?;
        min_r2 = min_r2.min(r.fit.r_squared);
    }
    ensure(min_r2 >= 0.97, || format!("linear family min R² {min_r2}"))?;
    let curves = trajectory_family(&curved);
    let mut max_r2 = 0.0f64;
    for (id, _) in &curved {
        let r = intra_layer(&curves, id, &grid, &cfg).map_err(|e| e.to_string())?;
        ensure(r.rho.abs() == 1.0, || format!("{id}: rho {}", r.rho))?;
        ensure(r.fit.r_squared < 1.0, || format!("{id}: R² {}", r.fit.r_squared))?;
        max_r2 = max_r2.max(r.fit.r_squared);
    }
    within_time(started.elapsed(), 5.0)?;
    Ok(format!("linear: rho = 1, min R² {min_r2:.4}; curved: |rho| = 1, max R² {max_r2:.4}"))
}

struct FixtureRun {
    _dir: tempfile::TempDir,
    out: std::path::PathBuf,
    fit_time: Duration,
    diffusion_time: Duration,
}

fn run_activation_fixture() -> Result<FixtureRun, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let act = dir.path().join("activations");
    write_activation_fixture(&act, &ActivationFixture::default()).map_err(|e| e.to_string())?;
    let mut cfg = PipelineConfig { seed: Some(3), ..Default::default() };
    cfg.paths.activations = Some(act);
    cfg.paths.output = dir.path().join("out");
    let started = Instant::now();
    cfg.stages = vec![Stage::Pool, Stage::Cka, Stage::Fit];
    pipeline::run_pipeline(&cfg).map_err(|e| e.to_string())?;
    let fit_time = started.elapsed();
    let started = Instant::now();
    cfg.stages = vec![Stage::Diffusion];
    pipeline::run_pipeline(&cfg).map_err(|e| e.to_string())?;
    let diffusion_time = started.elapsed();
    Ok(FixtureRun { out: cfg.paths.output.clone(), _dir: dir, fit_time, diffusion_time })
}

fn depth_trends(run: &FixtureRun) -> Outcome {
    let fits: Vec<FitRecord> = snrprobe::cka::read_csv(run.out.join(pipeline::FIT_FILE)).map_err(|e| e.to_string())?;
    let truth = fixture_layers();
    ensure(fits.len() == truth.len(), || format!("{} fitted layers, expected {}", fits.len(), truth.len()))?;
    // the ground-truth orderings, taken from the generator's parameters
    let mut by_slope: Vec<&str> = truth.iter().map(|l| l.info.layer_id.as_str()).collect();
    by_slope.sort_by(|a, b| {
        let s = |id: &str| truth.iter().find(|l| l.info.layer_id == id).unwrap().cka_slope;
        s(a).total_cmp(&s(b))
    });
    let mut fitted = fits.clone();
    fitted.sort_by(|a, b| a.slope.total_cmp(&b.slope));
    let fitted_slope: Vec<&str> = fitted.iter().map(|f| f.layer_id.as_str()).collect();
    ensure(fitted_slope == by_slope, || format!("slope order {fitted_slope:?}, expected {by_slope:?}"))?;
    let mut by_intercept: Vec<&str> = truth.iter().map(|l| l.info.layer_id.as_str()).collect();
    by_intercept.sort_by(|a, b| {
        let s = |id: &str| truth.iter().find(|l| l.info.layer_id == id).unwrap().cka_intercept;
        s(b).total_cmp(&s(a))
    });
    fitted.sort_by(|a, b| b.intercept.total_cmp(&a.intercept));
    let fitted_icpt: Vec<&str> = fitted.iter().map(|f| f.layer_id.as_str()).collect();
    ensure(fitted_icpt == by_intercept, || format!("intercept order {fitted_icpt:?}, expected {by_intercept:?}"))?;
    let min_r2 = fits.iter().map(|f| f.r_squared).fold(f64::INFINITY, f64::min);
    ensure(min_r2 > 0.95, || format!("min R² {min_r2}"))?;
    let records: Vec<CkaRecord> = snrprobe::cka::read_csv(run.out.join(pipeline::CKA_FILE)).map_err(|e| e.to_string())?;
    ensure(records.len() == 12 * 41, || format!("{} CKA rows", records.len()))?;
    within_time(run.fit_time, 10.0)?;
    Ok(format!(
        "12 layers, slope and intercept orderings exact, min R² {min_r2:.4}, {:.2} s",
        run.fit_time.as_secs_f64()
    ))
}

fn inter_layer_pattern(run: &FixtureRun) -> Outcome {
    let ddir = run.out.join(pipeline::DIFFUSION_DIR);
    let report = DiffusionReport::read(&ddir.join(pipeline::DIFFUSION_REPORT_FILE)).map_err(|e| e.to_string())?;
    let inter = report.inter.ok_or("no inter-layer analysis")?;
    let latent: Vec<String> =
        fixture_layers().into_iter().filter(|l| l.info.block == "latent").map(|l| l.info.layer_id).collect();
    for id in &latent {
        ensure(!inter.layers.contains(id), || format!("{id} participates"))?;
    }
    ensure(inter.excluded.iter().any(|e| latent.contains(&e.layer_id)), || "latent block not reported as excluded".into())?;
    let lo = read_matrix_csv(&ddir.join("diffusion_inter_-10.csv")).map_err(|e| e.to_string())?;
    let hi = read_matrix_csv(&ddir.join("diffusion_inter_30.csv")).map_err(|e| e.to_string())?;
    let at = |m: &snrprobe::report::LabelledMatrix, a: &str, b: &str| -> Result<f64, String> {
        let i = m.labels.iter().position(|l| l == a).ok_or(format!("{a} missing"))?;
        let j = m.labels.iter().position(|l| l == b).ok_or(format!("{b} missing"))?;
        Ok(m.values[i][j])
    };
    let mut pairs = 0;
    for e in inter.layers.iter().filter(|l| l.starts_with("enc")) {
        for d in inter.layers.iter().filter(|l| l.starts_with("dec")) {
            let (a, b) = (at(&lo, e, d)?, at(&hi, e, d)?);
            ensure(a > b, || format!("{e}-{d}: {a} at -10 dB vs {b} at 30 dB"))?;
            pairs += 1;
        }
    }
    ensure(pairs > 0, || "no encoder-decoder pairs".into())?;
    #[derive(serde::Deserialize)]
    struct ToClean {
        snr_db: i32,
        layer_id: String,
        distance: f64,
    }
    let rows: Vec<ToClean> =
        snrprobe::cka::read_csv(ddir.join("diffusion_inter_to_clean.csv")).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for snr in [-10, -5, 0] {
        let get = |prefix: &str| -> Vec<f64> {
            rows.iter().filter(|r| r.snr_db == snr && r.layer_id.starts_with(prefix)).map(|r| r.distance).collect()
        };
        let refine = get("refine");
        let dec = get("dec");
        ensure(!refine.is_empty() && !dec.is_empty(), || format!("no refine/dec rows at {snr} dB"))?;
        let worst_refine = refine.iter().copied().fold(0.0, f64::max);
        let best_dec = dec.iter().copied().fold(f64::INFINITY, f64::min);
        ensure(worst_refine < best_dec, || format!("{snr} dB: refine {worst_refine} vs decoder {best_dec}"))?;
        checked += 1;
    }
    within_time(run.diffusion_time, 10.0)?;
    Ok(format!(
        "{pairs} encoder-decoder pairs shrink from -10 to 30 dB; refine closer to clean than decoder at {checked} SNRs; excluded {:?}",
        inter.excluded.iter().map(|e| e.layer_id.as_str()).collect::<Vec<_>>()
    ))
}

fn full_run(root: &Path, out: &str, jobs: usize) -> Result<RunSummary, String> {
    let mut cfg = PipelineConfig::load(&root.join(fixture::FIXTURE_CONFIG)).map_err(|e| e.to_string())?;
    cfg.paths.output = root.join(out);
    cfg.jobs = Some(jobs);
    pipeline::run_pipeline(&cfg).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    fixture::write_fixture(dir.path(), 7).map_err(|e| e.to_string())?;
    let runs = [("a1", 1), ("b1", 1), ("a8", 8), ("b8", 8)];
    let mut summaries = Vec::new();
    for (name, jobs) in runs {
        summaries.push((name, full_run(dir.path(), name, jobs)?));
    }
    let reference = &summaries[0].1;
    let n_csv = reference.files.iter().filter(|f| f.path.ends_with(".csv")).count();
    let n_svg = reference.files.iter().filter(|f| f.path.ends_with(".svg")).count();
    ensure(n_csv > 0 && n_svg > 0, || format!("{n_csv} CSV and {n_svg} SVG files"))?;
    for (name, s) in &summaries[1..] {
        ensure(s.files == reference.files, || {
            let diff: Vec<&str> = s
                .files
                .iter()
                .zip(&reference.files)
                .filter(|(a, b)| a != b)
                .map(|(a, _)| a.path.as_str())
                .take(5)
                .collect();
            format!("run {name} differs from a1 (first: {diff:?})")
        })?;
        // the digests must describe the bytes actually on disk
        for f in s.files.iter().step_by(17) {
            let bytes = std::fs::read(dir.path().join(name).join(&f.path)).map_err(|e| e.to_string())?;
            ensure(bytes.len() as u64 == f.bytes, || format!("{name}/{}: size mismatch", f.path))?;
        }
    }
    Ok(format!(
        "4 runs (jobs 1, 1, 8, 8) hash-identical over {} files ({n_csv} CSV, {n_svg} SVG)",
        reference.files.len()
    ))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn main() -> ExitCode {
    let shared = run_activation_fixture();
    let results: Vec<(&str, Outcome)> = vec![
        ("mixing exactness", guarded(mixing_exactness)),
        ("loudness conformance", guarded(loudness_conformance)),
        ("CKA correctness", guarded(cka_correctness)),
        ("diffusion-distance oracle", guarded(diffusion_oracle)),
        ("DC1 trajectory statistics", guarded(dc1_trajectories)),
        ("depth-trend recovery", guarded(|| shared.as_ref().map_err(Clone::clone).and_then(depth_trends))),
        ("inter-layer pattern", guarded(|| shared.as_ref().map_err(Clone::clone).and_then(inter_layer_pattern))),
        ("determinism", guarded(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, r)) in results.iter().enumerate() {
        match r {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
