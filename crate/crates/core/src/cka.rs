//! Linear centered kernel alignment between clean and noisy embeddings.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::seeded_key_hash;
use crate::par;
use crate::tensor::{CellKey, EmbeddingSet, LayerInfo};

#[derive(Debug, Error)]
pub enum CkaError {
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("row mismatch: {0}")]
    RowMismatch(String),
    #[error("centered matrix is zero")]
    DegenerateInput,
    #[error("missing cell: layer {layer}, condition {noise_type}, snr {snr_db:?}")]
    MissingCell { layer: String, noise_type: String, snr_db: Option<i32> },
    #[error("invalid cka config: {0}")]
    InvalidConfig(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CkaError {
    fn missing(key: &CellKey) -> CkaError {
        CkaError::MissingCell { layer: key.layer_id.clone(), noise_type: key.noise_type.clone(), snr_db: key.snr_db }
    }
}

/// Sample unit of the CKA matrices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CkaRows {
    /// One row per utterance (clean vs noisy, same utterance order).
    #[default]
    Utterances,
    /// Clean and noisy cell centroids compared feature-wise (d x 1 columns).
    Centroids,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CkaConfig {
    pub bootstrap_resamples: usize,
    pub ci_level: f64,
    /// Taken from the run's global seed, never from a config file.
    #[serde(skip)]
    pub rng_seed: u64,
    pub rows: CkaRows,
}

impl Default for CkaConfig {
    fn default() -> Self {
        CkaConfig { bootstrap_resamples: 1000, ci_level: 0.95, rng_seed: 0, rows: CkaRows::Utterances }
    }
}

impl CkaConfig {
    pub fn validate(&self) -> Result<(), CkaError> {
        if self.bootstrap_resamples < 1 {
            return Err(CkaError::InvalidConfig("bootstrap_resamples must be >= 1".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(CkaError::InvalidConfig(format!("ci_level {} outside (0, 1)", self.ci_level)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseCka {
    pub noise_type: String,
    pub cka: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CkaPoint {
    pub layer_id: String,
    pub snr_db: i32,
    pub cka: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_rows: usize,
    pub per_noise: Vec<NoiseCka>,
}

/// Subtracts each column's mean (two-pass).
pub fn center_columns(x: &DMatrix<f64>) -> Result<DMatrix<f64>, CkaError> {
    let n = x.nrows();
    if n < 2 {
        return Err(CkaError::TooFewRows(n));
    }
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.iter().sum::<f64>() / n as f64;
        col.iter_mut().for_each(|v| *v -= mean);
        // second pass removes the rounding residue of the first
        let resid = col.iter().sum::<f64>() / n as f64;
        col.iter_mut().for_each(|v| *v -= resid);
    }
    Ok(out)
}

fn is_degenerate(raw: &DMatrix<f64>, centered: &DMatrix<f64>) -> bool {
    let c = centered.norm();
    c == 0.0 || c <= 1e-12 * raw.norm()
}

/// Linear CKA of two row-aligned matrices (column counts may differ).
pub fn linear_cka(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64, CkaError> {
    if x.nrows() != y.nrows() {
        return Err(CkaError::RowMismatch(format!("{} rows vs {} rows", x.nrows(), y.nrows())));
    }
    let xc = center_columns(x)?;
    let yc = center_columns(y)?;
    if is_degenerate(x, &xc) || is_degenerate(y, &yc) {
        return Err(CkaError::DegenerateInput);
    }
    let n = x.nrows();
    let (cross, kx, ky) = if n < x.ncols().max(y.ncols()) {
        let k = &xc * xc.transpose();
        let l = &yc * yc.transpose();
        (k.dot(&l), k.norm(), l.norm())
    } else {
        let c = yc.transpose() * &xc;
        (c.norm_squared(), (xc.transpose() * &xc).norm(), (yc.transpose() * &yc).norm())
    };
    Ok((cross / (kx * ky)).clamp(0.0, 1.0))
}

fn rows_matrix(rows: &[&Vec<f64>]) -> DMatrix<f64> {
    let d = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j])
}

fn column_matrix(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v)
}

/// Nearest-rank percentile of sorted values.
fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Percentile bootstrap of the mean over `values`, resampled with replacement.
fn bootstrap_ci(values: &[f64], resamples: usize, level: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let m = values.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..m).map(|_| values[rng.gen_range(0..m)]).sum::<f64>() / m as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    (nearest_rank(&means, alpha / 2.0), nearest_rank(&means, 1.0 - alpha / 2.0))
}

/// Seed of the bootstrap stream for one (layer, snr) cell.
pub fn cell_seed(seed: u64, layer_id: &str, snr_db: i32) -> u64 {
    seeded_key_hash(seed, &format!("{layer_id}|{snr_db}"))
}

/// CKA between clean and noisy embeddings of one layer at one SNR, averaged over noise types.
pub fn cka_profile(set: &EmbeddingSet, layer_id: &str, snr_db: i32, config: &CkaConfig) -> Result<CkaPoint, CkaError> {
    config.validate()?;
    let clean_key = CellKey::clean(layer_id);
    let clean = set.rows(&clean_key).ok_or_else(|| CkaError::missing(&clean_key))?;
    let noise_types = set.noise_types();
    if noise_types.is_empty() {
        return Err(CkaError::missing(&CellKey::noisy(layer_id, "*", snr_db)));
    }
    let mut per_noise = Vec::with_capacity(noise_types.len());
    let mut n_rows = 0;
    for noise in &noise_types {
        let key = CellKey::noisy(layer_id, noise, snr_db);
        let noisy = set.rows(&key).ok_or_else(|| CkaError::missing(&key))?;
        if !noisy.keys().eq(clean.keys()) {
            return Err(CkaError::RowMismatch(format!(
                "layer {layer_id}, {noise} at {snr_db} dB: utterances differ from the clean set"
            )));
        }
        let cka = match config.rows {
            CkaRows::Utterances => {
                n_rows = clean.len();
                let x = rows_matrix(&clean.values().collect::<Vec<_>>());
                let y = rows_matrix(&noisy.values().collect::<Vec<_>>());
                linear_cka(&x, &y)?
            }
            CkaRows::Centroids => {
                let centroid = |rows: &std::collections::BTreeMap<String, Vec<f64>>| {
                    let d = rows.values().next().map_or(0, Vec::len);
                    let mut mean = vec![0.0; d];
                    for (k, v) in rows.values().enumerate() {
                        let k = (k + 1) as f64;
                        mean.iter_mut().zip(v).for_each(|(m, x)| *m += (x - *m) / k);
                    }
                    mean
                };
                let x = centroid(clean);
                n_rows = x.len();
                linear_cka(&column_matrix(&x), &column_matrix(&centroid(noisy)))?
            }
        };
        per_noise.push(NoiseCka { noise_type: noise.clone(), cka });
    }
    let values: Vec<f64> = per_noise.iter().map(|p| p.cka).collect();
    let cka = values.iter().sum::<f64>() / values.len() as f64;
    let (lo, hi) = if values.len() == 1 {
        (cka, cka)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(config.rng_seed, layer_id, snr_db));
        bootstrap_ci(&values, config.bootstrap_resamples, config.ci_level, &mut rng)
    };
    Ok(CkaPoint {
        layer_id: layer_id.to_string(),
        snr_db,
        cka,
        ci_low: lo.min(cka).clamp(0.0, 1.0),
        ci_high: hi.max(cka).clamp(0.0, 1.0),
        n_rows,
        per_noise,
    })
}

/// Evaluates every (layer, SNR) cell, layers in depth order and SNRs ascending.
pub fn cka_grid(set: &EmbeddingSet, config: &CkaConfig) -> Result<Vec<CkaPoint>, CkaError> {
    config.validate()?;
    let snrs = set.snrs();
    let cells: Vec<(&str, i32)> = set
        .layers()
        .iter()
        .flat_map(|l| snrs.iter().map(move |&s| (l.layer_id.as_str(), s)))
        .collect();
    par::try_map(&cells, |&(layer, snr)| cka_profile(set, layer, snr, config))
}

/// One line of `cka.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CkaRecord {
    pub layer_id: String,
    pub block: String,
    pub depth_index: usize,
    pub snr_db: i32,
    pub cka: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_rows: usize,
}

/// One line of `cka_per_noise.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseCkaRecord {
    pub layer_id: String,
    pub noise_type: String,
    pub snr_db: i32,
    pub cka: f64,
}

pub fn records(points: &[CkaPoint], layers: &[LayerInfo]) -> Vec<CkaRecord> {
    points
        .iter()
        .map(|p| {
            let layer = layers.iter().find(|l| l.layer_id == p.layer_id);
            CkaRecord {
                layer_id: p.layer_id.clone(),
                block: layer.map(|l| l.block.clone()).unwrap_or_default(),
                depth_index: layer.map_or(0, |l| l.depth_index),
                snr_db: p.snr_db,
                cka: p.cka,
                ci_low: p.ci_low,
                ci_high: p.ci_high,
                n_rows: p.n_rows,
            }
        })
        .collect()
}

pub fn noise_records(points: &[CkaPoint]) -> Vec<NoiseCkaRecord> {
    points
        .iter()
        .flat_map(|p| {
            p.per_noise.iter().map(move |n| NoiseCkaRecord {
                layer_id: p.layer_id.clone(),
                noise_type: n.noise_type.clone(),
                snr_db: p.snr_db,
                cka: n.cka,
            })
        })
        .collect()
}

pub fn write_csv<T: Serialize>(rows: &[T], path: impl AsRef<Path>) -> Result<(), CkaError> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|source| CkaError::Io { path: parent.display().to_string(), source })?;
    }
    let mut w = csv::Writer::from_path(path)?;
    rows.iter().try_for_each(|r| w.serialize(r))?;
    w.flush().map_err(|source| CkaError::Io { path: path.display().to_string(), source })
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>, CkaError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<T>, _>>()?)
}
