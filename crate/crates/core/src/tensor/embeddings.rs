//! Pooled embeddings keyed by (layer, condition, SNR, utterance) and their centroids.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{global_average_pool, read_tensor, ActivationsManifest, LayerInfo, TensorError};
use crate::par;

/// Noise-type name of the clean pseudo-condition.
pub const CLEAN_CONDITION: &str = "clean";

const EMBEDDINGS_MAGIC: &[u8; 8] = b"SNREMB01";

/// Identifies one (layer, noise type, SNR) cell; clean cells have no SNR.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub layer_id: String,
    pub noise_type: String,
    pub snr_db: Option<i32>,
}

impl CellKey {
    pub fn clean(layer_id: &str) -> CellKey {
        CellKey { layer_id: layer_id.to_string(), noise_type: CLEAN_CONDITION.to_string(), snr_db: None }
    }

    pub fn noisy(layer_id: &str, noise_type: &str, snr_db: i32) -> CellKey {
        CellKey { layer_id: layer_id.to_string(), noise_type: noise_type.to_string(), snr_db: Some(snr_db) }
    }

    pub fn is_clean(&self) -> bool {
        self.snr_db.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub layer_id: String,
    pub noise_type: String,
    pub snr_db: Option<i32>,
    pub utterance_id: String,
    pub vector: Vec<f64>,
}

impl Embedding {
    pub fn cell(&self) -> CellKey {
        CellKey { layer_id: self.layer_id.clone(), noise_type: self.noise_type.clone(), snr_db: self.snr_db }
    }
}

/// Running mean; exact for repeated identical inputs.
fn accumulate_mean(mean: &mut [f64], x: &[f64], count: usize) {
    let k = count as f64;
    mean.iter_mut().zip(x).for_each(|(m, v)| *m += (v - *m) / k);
}

/// Per-utterance embeddings of every layer and condition.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct EmbeddingSet {
    layers: Vec<LayerInfo>,
    cells: BTreeMap<CellKey, BTreeMap<String, Vec<f64>>>,
}

impl EmbeddingSet {
    pub fn new(mut layers: Vec<LayerInfo>, embeddings: Vec<Embedding>) -> Result<EmbeddingSet, TensorError> {
        layers.sort_by_key(|l| l.depth_index);
        let known: BTreeSet<&str> = layers.iter().map(|l| l.layer_id.as_str()).collect();
        let mut dims: BTreeMap<String, usize> = BTreeMap::new();
        let mut cells: BTreeMap<CellKey, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
        for e in embeddings {
            if !known.contains(e.layer_id.as_str()) {
                return Err(TensorError::Manifest(format!("embedding for unknown layer {}", e.layer_id)));
            }
            let expected = *dims.entry(e.layer_id.clone()).or_insert(e.vector.len());
            if expected != e.vector.len() {
                return Err(TensorError::DimensionMismatch { layer: e.layer_id, expected, found: e.vector.len() });
            }
            let key = e.cell();
            if cells.entry(key).or_default().insert(e.utterance_id.clone(), e.vector).is_some() {
                return Err(TensorError::Manifest(format!(
                    "duplicate embedding for layer {} utterance {}",
                    e.layer_id, e.utterance_id
                )));
            }
        }
        Ok(EmbeddingSet { layers, cells })
    }

    /// Layers in depth order.
    pub fn layers(&self) -> &[LayerInfo] {
        &self.layers
    }

    pub fn layer(&self, id: &str) -> Option<&LayerInfo> {
        self.layers.iter().find(|l| l.layer_id == id)
    }

    pub fn dim(&self, layer_id: &str) -> Option<usize> {
        self.cells
            .iter()
            .find(|(k, _)| k.layer_id == layer_id)
            .and_then(|(_, rows)| rows.values().next().map(Vec::len))
    }

    /// Utterance-keyed rows of one cell, in sorted utterance order.
    pub fn rows(&self, key: &CellKey) -> Option<&BTreeMap<String, Vec<f64>>> {
        self.cells.get(key)
    }

    pub fn cells(&self) -> impl Iterator<Item = (&CellKey, &BTreeMap<String, Vec<f64>>)> {
        self.cells.iter()
    }

    pub fn noise_types(&self) -> BTreeSet<String> {
        self.cells.keys().filter(|k| !k.is_clean()).map(|k| k.noise_type.clone()).collect()
    }

    pub fn snrs(&self) -> BTreeSet<i32> {
        self.cells.keys().filter_map(|k| k.snr_db).collect()
    }

    pub fn len(&self) -> usize {
        self.cells.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn embeddings(&self) -> Vec<Embedding> {
        self.cells
            .iter()
            .flat_map(|(k, rows)| {
                rows.iter().map(move |(u, v)| Embedding {
                    layer_id: k.layer_id.clone(),
                    noise_type: k.noise_type.clone(),
                    snr_db: k.snr_db,
                    utterance_id: u.clone(),
                    vector: v.clone(),
                })
            })
            .collect()
    }

    pub fn centroids(&self) -> CentroidSet {
        let cells = self
            .cells
            .iter()
            .map(|(k, rows)| {
                let mut mean = vec![0.0; rows.values().next().map_or(0, Vec::len)];
                for (i, v) in rows.values().enumerate() {
                    accumulate_mean(&mut mean, v, i + 1);
                }
                (k.clone(), Centroid { vector: mean, count: rows.len() })
            })
            .collect();
        CentroidSet { cells }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Centroid {
    pub vector: Vec<f64>,
    pub count: usize,
}

/// Per-cell mean embeddings.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct CentroidSet {
    pub cells: BTreeMap<CellKey, Centroid>,
}

impl CentroidSet {
    pub fn get(&self, key: &CellKey) -> Option<&Centroid> {
        self.cells.get(key)
    }

    pub fn insert(&mut self, key: CellKey, vector: Vec<f64>) {
        self.cells.insert(key, Centroid { vector, count: 1 });
    }

    pub fn clean(&self, layer_id: &str) -> Option<&Centroid> {
        self.cells.get(&CellKey::clean(layer_id))
    }

    pub fn noise_types(&self, layer_id: &str) -> BTreeSet<String> {
        self.cells
            .keys()
            .filter(|k| k.layer_id == layer_id && !k.is_clean())
            .map(|k| k.noise_type.clone())
            .collect()
    }

    pub fn snrs(&self, layer_id: &str) -> BTreeSet<i32> {
        self.cells.keys().filter(|k| k.layer_id == layer_id).filter_map(|k| k.snr_db).collect()
    }

    /// Mean of the per-noise-type centroids at one SNR, noise types in sorted order.
    pub fn noise_averaged(&self, layer_id: &str, snr_db: i32) -> Option<Vec<f64>> {
        let mut mean: Option<Vec<f64>> = None;
        let mut k = 0;
        for (key, c) in self.cells.range(CellKey::noisy(layer_id, "", i32::MIN)..) {
            if key.layer_id != layer_id {
                break;
            }
            if key.snr_db != Some(snr_db) {
                continue;
            }
            k += 1;
            let m = mean.get_or_insert_with(|| vec![0.0; c.vector.len()]);
            accumulate_mean(m, &c.vector, k);
        }
        mean
    }
}

/// Averages each cell's embeddings across utterances.
///
/// Summation follows sorted utterance order so the result is bit-reproducible.
pub fn build_centroids(embeddings: &[Embedding]) -> Result<CentroidSet, TensorError> {
    let mut grouped: BTreeMap<CellKey, Vec<&Embedding>> = BTreeMap::new();
    let mut dims: BTreeMap<&str, usize> = BTreeMap::new();
    for e in embeddings {
        let expected = *dims.entry(&e.layer_id).or_insert(e.vector.len());
        if expected != e.vector.len() {
            return Err(TensorError::DimensionMismatch {
                layer: e.layer_id.clone(),
                expected,
                found: e.vector.len(),
            });
        }
        grouped.entry(e.cell()).or_default().push(e);
    }
    let cells = grouped
        .into_iter()
        .map(|(key, mut members)| {
            members.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
            let mut mean = vec![0.0; members[0].vector.len()];
            for (i, e) in members.iter().enumerate() {
                accumulate_mean(&mut mean, &e.vector, i + 1);
            }
            (key, Centroid { vector: mean, count: members.len() })
        })
        .collect();
    Ok(CentroidSet { cells })
}

/// How window-level tensors of one utterance are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowAggregation {
    /// Pool each window, then average the pooled vectors.
    #[default]
    MeanOfWindows,
    /// Pool over all tokens of all windows (windows weighted by token count).
    TokenWeighted,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolConfig {
    pub window_aggregation: WindowAggregation,
}

/// Reads every manifest entry under `root`, pools it, and builds the embedding set.
pub fn pool_activations(
    manifest: &ActivationsManifest,
    root: &Path,
    config: &PoolConfig,
) -> Result<EmbeddingSet, TensorError> {
    manifest.validate()?;
    let mut entries = manifest.entries.clone();
    entries.sort_by(|a, b| {
        (&a.layer_id, &a.noise_type, a.snr_db, &a.utterance_id, a.window)
            .cmp(&(&b.layer_id, &b.noise_type, b.snr_db, &b.utterance_id, b.window))
    });
    let pooled = par::try_map(&entries, |e| {
        let layer = manifest.layer(&e.layer_id).expect("validated manifest");
        let t = read_tensor(root.join(&e.path))?;
        let axis = layer.token_axis;
        if axis >= t.shape.len() {
            return Err(TensorError::InvalidAxis { axis, rank: t.shape.len() });
        }
        let mut trailing = t.shape.clone();
        let tokens = trailing.remove(axis);
        Ok((global_average_pool(&t, axis)?, tokens, trailing))
    })?;

    let mut shapes: BTreeMap<&str, &Vec<usize>> = BTreeMap::new();
    let mut grouped: BTreeMap<(&str, &str, Option<i32>, &str), Vec<(Vec<f64>, usize)>> = BTreeMap::new();
    for (e, (vector, tokens, trailing)) in entries.iter().zip(&pooled) {
        let first = *shapes.entry(&e.layer_id).or_insert(trailing);
        if first != trailing {
            return Err(TensorError::DimensionMismatch {
                layer: e.layer_id.clone(),
                expected: first.iter().product(),
                found: trailing.iter().product(),
            });
        }
        grouped
            .entry((&e.layer_id, &e.noise_type, e.snr_db, &e.utterance_id))
            .or_default()
            .push((vector.clone(), *tokens));
    }

    let embeddings = grouped
        .into_iter()
        .map(|((layer, noise, snr, utt), windows)| {
            let vector = match config.window_aggregation {
                WindowAggregation::MeanOfWindows => {
                    let mut mean = vec![0.0; windows[0].0.len()];
                    for (i, (v, _)) in windows.iter().enumerate() {
                        accumulate_mean(&mut mean, v, i + 1);
                    }
                    mean
                }
                WindowAggregation::TokenWeighted => {
                    let total: usize = windows.iter().map(|(_, t)| t).sum();
                    let mut acc = vec![0.0; windows[0].0.len()];
                    for (v, t) in &windows {
                        acc.iter_mut().zip(v).for_each(|(a, x)| *a += x * *t as f64);
                    }
                    acc.iter_mut().for_each(|a| *a /= total as f64);
                    acc
                }
            };
            Embedding {
                layer_id: layer.to_string(),
                noise_type: noise.to_string(),
                snr_db: snr,
                utterance_id: utt.to_string(),
                vector,
            }
        })
        .collect();
    EmbeddingSet::new(manifest.ordered_layers(), embeddings)
}

#[derive(Serialize, Deserialize)]
struct EmbeddingsHeader {
    layers: Vec<LayerInfo>,
    records: Vec<RecordHeader>,
}

#[derive(Serialize, Deserialize)]
struct RecordHeader {
    layer_id: String,
    noise_type: String,
    snr_db: Option<i32>,
    utterance_id: String,
    dim: usize,
}

/// Writes `embeddings.bin`: magic, `u64` header length, JSON header, `f64` LE payload.
pub fn write_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<(), TensorError> {
    let path = path.as_ref();
    let embeddings = set.embeddings();
    let header = EmbeddingsHeader {
        layers: set.layers.clone(),
        records: embeddings
            .iter()
            .map(|e| RecordHeader {
                layer_id: e.layer_id.clone(),
                noise_type: e.noise_type.clone(),
                snr_db: e.snr_db,
                utterance_id: e.utterance_id.clone(),
                dim: e.vector.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = EMBEDDINGS_MAGIC.to_vec();
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for e in &embeddings {
        e.vector.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| TensorError::io(parent, e))?;
    }
    std::fs::write(path, out).map_err(|e| TensorError::io(path, e))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet, TensorError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| TensorError::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != EMBEDDINGS_MAGIC {
        return Err(TensorError::BadMagic);
    }
    let hlen = usize::try_from(u64::from_le_bytes(bytes[8..16].try_into().unwrap()))
        .map_err(|_| TensorError::Malformed("header length".into()))?;
    let body = 16usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| TensorError::Malformed("embeddings header runs past end of file".into()))?;
    let header: EmbeddingsHeader = serde_json::from_slice(&bytes[16..body])?;
    let need: usize = header.records.iter().map(|r| r.dim * 8).sum();
    let payload = &bytes[body..];
    if payload.len() != need {
        return Err(TensorError::ShapeOverflow(format!(
            "records need {need} payload bytes, file has {}",
            payload.len()
        )));
    }
    let mut pos = 0;
    let embeddings = header
        .records
        .into_iter()
        .map(|r| {
            let vector = payload[pos..pos + r.dim * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            pos += r.dim * 8;
            Embedding { layer_id: r.layer_id, noise_type: r.noise_type, snr_db: r.snr_db, utterance_id: r.utterance_id, vector }
        })
        .collect();
    EmbeddingSet::new(header.layers, embeddings)
}
