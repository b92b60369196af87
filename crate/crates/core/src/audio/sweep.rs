//! SNR sweep generation: trim, seeded noise segment, scale, add, normalise, write.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    center_trim, normalize_lufs, read_wav, scale_noise_to_snr, select_noise_segment, snr_db,
    write_wav_f32, AudioClip, AudioError, Trimmed,
};
use crate::par;

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;
const REFERENCE_DIR: &str = "reference";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub snr_grid_db: Vec<i32>,
    pub clip_duration_s: f64,
    pub window_duration_s: f64,
    pub target_lufs: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            snr_grid_db: (-10..=30).collect(),
            clip_duration_s: 10.0,
            window_duration_s: 1.9,
            target_lufs: -23.0,
        }
    }
}

impl SweepConfig {
    /// Integer grid `min..=max` with the remaining fields at their defaults.
    pub fn with_range(min_db: i32, max_db: i32) -> SweepConfig {
        SweepConfig { snr_grid_db: (min_db..=max_db).collect(), ..SweepConfig::default() }
    }

    pub fn validate(&self) -> Result<(), AudioError> {
        let bad = |m: String| Err(AudioError::InvalidConfig(m));
        if self.snr_grid_db.is_empty() {
            return bad("SNR grid is empty".into());
        }
        if self.snr_grid_db.windows(2).any(|w| w[0] >= w[1]) {
            return bad("SNR grid must be strictly increasing".into());
        }
        if !(self.clip_duration_s > 0.0) || !(self.window_duration_s > 0.0) {
            return bad("durations must be positive".into());
        }
        if self.window_duration_s > self.clip_duration_s {
            return bad("window longer than clip".into());
        }
        if !self.target_lufs.is_finite() {
            return bad("target loudness must be finite".into());
        }
        Ok(())
    }
}

/// Recipe and realised gains of one generated mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub utterance_id: String,
    pub noise_type: String,
    pub target_snr_db: i32,
    pub master_seed: u64,
    pub noise_offset: u64,
    pub noise_gain: f64,
    pub post_gain: f64,
    /// SNR recomputed from the post-gain clean and noise components.
    pub realized_snr_db: f64,
    pub output_lufs: f64,
    pub peak: f64,
    pub padded: bool,
    pub window_count: usize,
    pub path: String,
    pub warnings: Vec<String>,
}

/// Loudness-normalised clean utterance written next to the mixtures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleanReference {
    pub utterance_id: String,
    pub post_gain: f64,
    pub padded: bool,
    pub path: String,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub utterance_id: Option<String>,
    pub noise_type: Option<String>,
    pub target_snr_db: Option<i32>,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureManifest {
    pub schema_version: u32,
    pub master_seed: u64,
    pub sample_rate_hz: u32,
    pub config: SweepConfig,
    pub clean: Vec<CleanReference>,
    pub entries: Vec<MixtureSpec>,
    pub errors: Vec<CellError>,
}

impl MixtureManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<MixtureManifest, AudioError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| AudioError::Io { path: path.to_path_buf(), source: e })?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Key hashed with the master seed to place the noise segment.
pub fn mixture_key(utterance_id: &str, noise_type: &str) -> String {
    format!("{utterance_id}|{noise_type}")
}

fn list_wavs(dir: &Path) -> Result<Vec<(String, PathBuf)>, AudioError> {
    let io = |e| AudioError::Io { path: dir.to_path_buf(), source: e };
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        let is_wav = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if is_wav && path.is_file() {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    if out.is_empty() {
        return Err(AudioError::EmptyDir(dir.to_path_buf()));
    }
    out.sort();
    Ok(out)
}

struct Cell<'a> {
    utterance_id: &'a str,
    clean: &'a Trimmed,
    noise_type: &'a str,
    noise: &'a AudioClip,
    snr_db: i32,
}

fn over_full_scale(peak: f64) -> Vec<String> {
    if peak > 1.0 {
        vec![format!("peak {peak:.4} exceeds full scale after loudness normalisation (not clipped)")]
    } else {
        Vec::new()
    }
}

fn render_cell(cell: &Cell, config: &SweepConfig, seed: u64, out_dir: &Path) -> Result<MixtureSpec, AudioError> {
    let clean = &cell.clean.clip;
    let key = mixture_key(cell.utterance_id, cell.noise_type);
    let (segment, offset) = select_noise_segment(cell.noise, clean.len(), seed, &key)?;
    let (scaled_noise, noise_gain) = scale_noise_to_snr(clean, &segment, f64::from(cell.snr_db))?;
    let mixture = clean.mix(&scaled_noise)?;
    let normalized = normalize_lufs(&mixture, config.target_lufs)?;
    let post = normalized.post_gain;
    let realized_snr_db = snr_db(&clean.scaled(post), &scaled_noise.scaled(post));

    let rel = format!("{}/snr_{}/{}.wav", cell.noise_type, cell.snr_db, cell.utterance_id);
    write_wav_f32(out_dir.join(&rel), &normalized.clip)?;
    let window_len = (config.window_duration_s * f64::from(clean.sample_rate_hz())).round() as usize;
    let peak = normalized.clip.peak();
    Ok(MixtureSpec {
        utterance_id: cell.utterance_id.to_string(),
        noise_type: cell.noise_type.to_string(),
        target_snr_db: cell.snr_db,
        master_seed: seed,
        noise_offset: offset as u64,
        noise_gain,
        post_gain: post,
        realized_snr_db,
        output_lufs: super::measure_lufs(&normalized.clip)?,
        peak,
        padded: cell.clean.padded,
        window_count: if window_len == 0 { 0 } else { normalized.clip.len() / window_len },
        path: rel,
        warnings: over_full_scale(peak),
    })
}

/// Generates every (utterance, noise type, SNR) mixture under `out_dir`.
///
/// Mixtures go to `<noise>/snr_<snr>/<utterance>.wav`, normalised clean
/// references to `reference/<utterance>.wav`, and the manifest to
/// `manifest.json`. Output is a pure function of the input bytes, the config
/// and `master_seed`, independent of the thread count.
pub fn generate_sweep(
    clean_dir: impl AsRef<Path>,
    noise_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    config: &SweepConfig,
    master_seed: u64,
) -> Result<MixtureManifest, AudioError> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    let clean_files = list_wavs(clean_dir.as_ref())?;
    let noise_files = list_wavs(noise_dir.as_ref())?;

    let cleans: Vec<Result<Trimmed, AudioError>> = par::map(&clean_files, |(_, path)| {
        read_wav(path).and_then(|c| center_trim(&c, config.clip_duration_s))
    });
    let noises: Vec<Result<AudioClip, AudioError>> = par::map(&noise_files, |(_, path)| read_wav(path));

    let mut errors = Vec::new();
    let mut utterances = Vec::new();
    for ((id, _), res) in clean_files.iter().zip(cleans) {
        match res {
            Ok(t) => utterances.push((id.as_str(), t)),
            Err(e) => {
                log::error!("clean utterance {id}: {e}");
                return Err(AudioError::NoValidMixtures(id.clone()));
            }
        }
    }
    let mut noises_ok = Vec::new();
    for ((id, _), res) in noise_files.iter().zip(noises) {
        match res {
            Ok(n) => noises_ok.push((id.as_str(), n)),
            Err(e) => {
                log::warn!("noise {id} skipped: {e}");
                errors.push(CellError {
                    utterance_id: None,
                    noise_type: Some(id.clone()),
                    target_snr_db: None,
                    error: e.to_string(),
                });
            }
        }
    }

    let cells: Vec<Cell> = utterances
        .iter()
        .flat_map(|(uid, clean)| {
            noises_ok.iter().flat_map(move |(nid, noise)| {
                config.snr_grid_db.iter().map(move |&snr| Cell {
                    utterance_id: uid,
                    clean,
                    noise_type: nid,
                    noise,
                    snr_db: snr,
                })
            })
        })
        .collect();

    let results = par::map(&cells, |cell| render_cell(cell, config, master_seed, out_dir));
    let mut entries = Vec::with_capacity(results.len());
    for (cell, res) in cells.iter().zip(results) {
        match res {
            Ok(spec) => entries.push(spec),
            Err(e) => errors.push(CellError {
                utterance_id: Some(cell.utterance_id.to_string()),
                noise_type: Some(cell.noise_type.to_string()),
                target_snr_db: Some(cell.snr_db),
                error: e.to_string(),
            }),
        }
    }
    for (uid, _) in &utterances {
        if !entries.iter().any(|e| e.utterance_id == *uid) {
            return Err(AudioError::NoValidMixtures(uid.to_string()));
        }
    }

    let clean_refs = par::try_map(&utterances, |(uid, trimmed)| {
        let normalized = normalize_lufs(&trimmed.clip, config.target_lufs)?;
        let rel = format!("{REFERENCE_DIR}/{uid}.wav");
        write_wav_f32(out_dir.join(&rel), &normalized.clip)?;
        Ok::<_, AudioError>(CleanReference {
            utterance_id: uid.to_string(),
            post_gain: normalized.post_gain,
            padded: trimmed.padded,
            path: rel,
            warnings: over_full_scale(normalized.clip.peak()),
        })
    })?;

    let manifest = MixtureManifest {
        schema_version: MANIFEST_VERSION,
        master_seed,
        sample_rate_hz: utterances[0].1.clip.sample_rate_hz(),
        config: config.clone(),
        clean: clean_refs,
        entries,
        errors,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    std::fs::write(&path, json).map_err(|e| AudioError::Io { path, source: e })?;
    Ok(manifest)
}
