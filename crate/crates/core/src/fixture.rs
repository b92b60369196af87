//! Deterministic synthetic inputs: speech-like WAVs, noises, and a 12-layer
//! activation tree with known CKA trends and centroid drift.
//!
//! The activation construction makes linear CKA available in closed form.
//! Within a layer the clean rows vary only along two features (`A`), the
//! noise only along three others (`E`), and the utterance-space vectors of
//! the two are orthonormal and centred. With `K = XcXcᵀ` and `M = ZZᵀ` this
//! gives `tr(KM) = 0`, so `CKA = 1 / √(1 + σ⁴‖M‖²/‖K‖²)`, and `σ` can be
//! solved for any target value.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{write_wav_f32, write_wav_i16, AudioClip, AudioError, CANONICAL_RATE_HZ};
use crate::hash::seeded_key_hash;
use crate::par;
use crate::pipeline::{Paths, PipelineConfig, PipelineError};
use crate::tensor::{
    write_tensor, ActivationEntry, ActivationsManifest, LayerInfo, Tensor, TensorData, TensorError, CLEAN_CONDITION,
    LATENT_BLOCK,
};

const RATE: f64 = CANONICAL_RATE_HZ as f64;

fn rng_for(seed: u64, key: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seeded_key_hash(seed, key))
}

/// Harmonic "voice" with a syllabic envelope and short pauses.
fn voice(seconds: f64, f0: f64, syllable_hz: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = (seconds * RATE).round() as usize;
    let phases: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    let vibrato = rng.gen_range(3.0..6.0);
    (0..n)
        .map(|i| {
            let t = i as f64 / RATE;
            let env = (0.5 - 0.5 * (std::f64::consts::TAU * syllable_hz * t).cos()).powi(2);
            // a pause every ~2.3 s keeps the gate busy
            let pause = if (t % 2.3) > 2.0 { 0.0 } else { 1.0 };
            let f = f0 * (1.0 + 0.02 * (std::f64::consts::TAU * vibrato * t).sin());
            let tone: f64 = (1..=12)
                .map(|k| (std::f64::consts::TAU * f * k as f64 * t + phases[k - 1]).sin() / k as f64)
                .sum();
            env * pause * tone
        })
        .collect()
}

fn peak_normalize(mut v: Vec<f64>, peak: f64) -> Vec<f64> {
    let m = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    v.iter_mut().for_each(|x| *x *= peak / m);
    v
}

/// Directories holding the synthetic audio.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioFixture {
    pub clean_dir: PathBuf,
    pub noise_dir: PathBuf,
}

/// Writes two PCM16 clean utterances (10.5 s and 9.2 s, so one is trimmed and
/// one padded) and two float noises under `root/clean` and `root/noise`.
pub fn write_audio_fixture(root: &Path, seed: u64) -> Result<AudioFixture, AudioError> {
    let clean_dir = root.join("clean");
    let noise_dir = root.join("noise");
    for d in [&clean_dir, &noise_dir] {
        fs::create_dir_all(d).map_err(|source| AudioError::Io { path: d.to_path_buf(), source })?;
    }
    let clip = |v: Vec<f64>| AudioClip::new(v, CANONICAL_RATE_HZ);

    let mut rng = rng_for(seed, "utt_a");
    write_wav_i16(clean_dir.join("utt_a.wav"), &clip(peak_normalize(voice(10.5, 118.0, 3.1, &mut rng), 0.6))?)?;
    let mut rng = rng_for(seed, "utt_b");
    write_wav_i16(clean_dir.join("utt_b.wav"), &clip(peak_normalize(voice(9.2, 196.0, 4.3, &mut rng), 0.5))?)?;

    let mut rng = rng_for(seed, "babble");
    let mut babble = vec![0.0; (12.0 * RATE) as usize];
    for _ in 0..6 {
        let f0 = rng.gen_range(90.0..240.0);
        let syl = rng.gen_range(2.5..5.5);
        let v = voice(12.0, f0, syl, &mut rng);
        let shift = rng.gen_range(0..v.len());
        babble.iter_mut().enumerate().for_each(|(i, b)| *b += v[(i + shift) % v.len()]);
    }
    write_wav_f32(noise_dir.join("babble.wav"), &clip(peak_normalize(babble, 0.4))?)?;

    let mut rng = rng_for(seed, "white");
    let white: Vec<f64> = (0..(12.0 * RATE) as usize).map(|_| rng.gen_range(-0.3..0.3)).collect();
    write_wav_f32(noise_dir.join("white.wav"), &clip(white)?)?;

    Ok(AudioFixture { clean_dir, noise_dir })
}

/// Ground truth of one synthetic layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FixtureLayer {
    pub info: LayerInfo,
    pub dim: usize,
    /// Noise-averaged CKA at 0 dB.
    pub cka_intercept: f64,
    /// Noise-averaged CKA change per dB.
    pub cka_slope: f64,
    /// Centroid displacement at -10 dB; it falls linearly to zero at 30 dB.
    pub drift_amplitude: f64,
}

/// Twelve layers in six blocks of two. Slopes rise and intercepts fall with
/// depth; encoders barely drift, decoders drift most, refinement in between.
pub fn fixture_layers() -> Vec<FixtureLayer> {
    let blocks = [("enc1", 0.05), ("enc2", 0.1), (LATENT_BLOCK, 1.0), ("dec2", 3.0), ("dec1", 2.5), ("refine", 0.8)];
    let mut out = Vec::new();
    for (b, &(block, amp)) in blocks.iter().enumerate() {
        for i in 0..2 {
            let k = 2 * b + i;
            out.push(FixtureLayer {
                info: LayerInfo {
                    layer_id: format!("{block}.{i}"),
                    block: block.to_string(),
                    depth_index: k,
                    first_in_block: i == 0,
                    token_axis: if block.starts_with("dec") { 1 } else { 0 },
                    skip_input: block.starts_with("enc") && i == 1,
                    skip_output: block.starts_with("dec") && i == 0,
                },
                dim: if block == LATENT_BLOCK { 48 } else { 64 },
                cka_intercept: 0.95 - 0.03 * k as f64,
                cka_slope: 0.001 + 0.0008 * k as f64,
                drift_amplitude: amp,
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationFixture {
    pub utterances: usize,
    pub noise_types: Vec<String>,
    pub snr_grid_db: Vec<i32>,
    pub seed: u64,
}

impl Default for ActivationFixture {
    fn default() -> Self {
        ActivationFixture {
            utterances: 6,
            noise_types: vec!["babble".into(), "white".into()],
            snr_grid_db: (-10..=30).collect(),
            seed: 7,
        }
    }
}

/// Clean-feature scales; ‖K‖² = Σ s⁴.
const CLEAN_SCALES: [f64; 2] = [2.0, 1.0];
const NOISE_FEATURES: usize = 3;
/// Per-noise-type CKA offsets (they cancel in the average).
const NOISE_CKA_OFFSET: f64 = 0.01;
const CKA_WOBBLE: f64 = 0.002;

/// Noise scale giving the requested CKA under the closed form.
pub fn sigma_for_cka(cka: f64) -> f64 {
    let k2: f64 = CLEAN_SCALES.iter().map(|s| s.powi(4)).sum();
    let r2 = NOISE_FEATURES as f64 / k2;
    ((1.0 / (cka * cka) - 1.0) / r2).powf(0.25)
}

/// Orthonormal basis (n x (n-1)) of the vectors orthogonal to the ones vector.
fn centred_basis(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    m.column_mut(0).fill(1.0);
    let q = m.qr().q();
    q.columns(1, n - 1).into_owned()
}

fn tokens_for(pooled: &[f64], layer: &FixtureLayer, rng: &mut ChaCha8Rng) -> Tensor {
    let d = pooled.len();
    let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.2..0.2)).collect();
    // three tokens v + w, v - w, v average back to v
    let tok = |t: usize, j: usize| match t {
        0 => pooled[j] + w[j],
        1 => pooled[j] - w[j],
        _ => pooled[j],
    };
    let (shape, data): (Vec<usize>, Vec<f64>) = if layer.dim == 64 && layer.info.token_axis == 1 {
        let mut data = Vec::with_capacity(3 * d);
        for i in 0..8 {
            for t in 0..3 {
                for j in 0..8 {
                    data.push(tok(t, i * 8 + j));
                }
            }
        }
        (vec![8, 3, 8], data)
    } else if layer.dim == 64 {
        (vec![3, 8, 8], (0..3).flat_map(|t| (0..d).map(move |j| (t, j))).map(|(t, j)| tok(t, j)).collect())
    } else {
        (vec![3, d], (0..3).flat_map(|t| (0..d).map(move |j| (t, j))).map(|(t, j)| tok(t, j)).collect())
    };
    let t = Tensor::from_f64(shape, data);
    if layer.info.depth_index % 2 == 1 {
        Tensor { shape: t.shape.clone(), data: TensorData::F32(t.data.to_f64().iter().map(|&v| v as f32).collect()) }
    } else {
        t
    }
}

fn layer_entries(
    root: &Path,
    layer: &FixtureLayer,
    spec: &ActivationFixture,
) -> Result<Vec<ActivationEntry>, TensorError> {
    let id = &layer.info.layer_id;
    let d = layer.dim;
    let n = spec.utterances;
    let mut rng = rng_for(spec.seed, id);
    let basis = centred_basis(n, &mut rng);
    let ext = if layer.info.depth_index % 2 == 1 { "tnsr" } else { "npy" };
    let k = layer.info.depth_index;

    // features: 0..2 clean variation, 2..5 noise, 5+k layer offset, d-1 drift, d-2 per-noise drift tilt
    let mut base = vec![0.0; d];
    base[5 + k] = 1.0;
    let clean: Vec<Vec<f64>> = (0..n)
        .map(|u| {
            let mut v = base.clone();
            for (a, s) in CLEAN_SCALES.iter().enumerate() {
                v[a] += s * basis[(u, a)];
            }
            v
        })
        .collect();

    let utt = |u: usize| format!("utt{u:02}");
    let mut entries = Vec::new();
    let mut put = |rel: String, vector: &[f64], noise: &str, snr: Option<i32>, u: usize, window: Option<u32>, rng: &mut ChaCha8Rng| {
        let path = root.join(&rel);
        if let Some(p) = path.parent() {
            fs::create_dir_all(p).map_err(|e| TensorError::io(p, e))?;
        }
        write_tensor(&tokens_for(vector, layer, rng), &path)?;
        entries.push(ActivationEntry {
            layer_id: id.clone(),
            noise_type: noise.to_string(),
            snr_db: snr,
            utterance_id: utt(u),
            window,
            path: rel,
        });
        Ok::<(), TensorError>(())
    };
    let mut write_utt = |dir: String, vector: &[f64], noise: &str, snr: Option<i32>, u: usize, rng: &mut ChaCha8Rng| {
        if u == 0 {
            // utterance 0 is split into two windows whose pooled means straddle the vector
            let omega: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.1..0.1)).collect();
            for (w, sign) in [(0u32, 1.0), (1, -1.0)] {
                let v: Vec<f64> = vector.iter().zip(&omega).map(|(x, o)| x + sign * o).collect();
                put(format!("{dir}/{}_w{w}.{ext}", utt(u)), &v, noise, snr, u, Some(w), rng)?;
            }
            Ok(())
        } else {
            put(format!("{dir}/{}.{ext}", utt(u)), vector, noise, snr, u, None, rng)
        }
    };

    for (u, v) in clean.iter().enumerate() {
        write_utt(format!("{id}/{CLEAN_CONDITION}"), v, CLEAN_CONDITION, None, u, &mut rng)?;
    }
    for (ni, noise) in spec.noise_types.iter().enumerate() {
        let sign = if ni % 2 == 0 { -1.0 } else { 1.0 };
        let tilt = 0.05 * sign;
        for &snr in &spec.snr_grid_db {
            let wobble = rng.gen_range(-CKA_WOBBLE..CKA_WOBBLE);
            let target = (layer.cka_intercept + layer.cka_slope * snr as f64 + sign * NOISE_CKA_OFFSET + wobble)
                .clamp(0.05, 0.999);
            let sigma = sigma_for_cka(target);
            let tau = layer.drift_amplitude * (30 - snr) as f64 / 40.0;
            for (u, c) in clean.iter().enumerate() {
                let mut v = c.clone();
                for e in 0..NOISE_FEATURES {
                    v[2 + e] += sigma * basis[(u, CLEAN_SCALES.len() + e)];
                }
                v[d - 1] += tau;
                v[d - 2] += tau * tilt;
                write_utt(format!("{id}/{noise}/{snr}"), &v, noise, Some(snr), u, &mut rng)?;
            }
        }
    }
    Ok(entries)
}

/// Writes the activation tree and `activations_manifest.json` under `root`.
pub fn write_activation_fixture(root: &Path, spec: &ActivationFixture) -> Result<ActivationsManifest, TensorError> {
    if spec.utterances < NOISE_FEATURES + CLEAN_SCALES.len() + 1 {
        return Err(TensorError::Manifest(format!(
            "the closed-form construction needs at least {} utterances",
            NOISE_FEATURES + CLEAN_SCALES.len() + 1
        )));
    }
    let layers = fixture_layers();
    let per_layer = par::try_map(&layers, |l| layer_entries(root, l, spec))?;
    let manifest = ActivationsManifest {
        schema_version: ActivationsManifest::SCHEMA_VERSION,
        layers: layers.iter().map(|l| l.info.clone()).collect(),
        entries: per_layer.into_iter().flatten().collect(),
    };
    manifest.write(root.join("activations_manifest.json"))?;
    Ok(manifest)
}

/// Config file written by [`write_fixture`].
pub const FIXTURE_CONFIG: &str = "pipeline.json";

/// Writes audio, activations and a ready-to-run `pipeline.json` under `root`.
///
/// The config uses paths relative to `root` and writes results to `root/out`.
pub fn write_fixture(root: &Path, seed: u64) -> Result<PipelineConfig, PipelineError> {
    let cfg_err = |e: String| PipelineError::Config(e);
    write_audio_fixture(&root.join("audio"), seed).map_err(|e| cfg_err(e.to_string()))?;
    let spec = ActivationFixture { seed, ..ActivationFixture::default() };
    write_activation_fixture(&root.join("activations"), &spec).map_err(|e| cfg_err(e.to_string()))?;
    let mut cfg = PipelineConfig { seed: Some(seed), ..PipelineConfig::default() };
    cfg.paths = Paths {
        clean: Some("audio/clean".into()),
        noise: Some("audio/noise".into()),
        activations: Some("activations".into()),
        activations_manifest: None,
        output: "out".into(),
    };
    cfg.save(&root.join(FIXTURE_CONFIG))?;
    cfg.resolve_paths(root);
    Ok(cfg)
}
