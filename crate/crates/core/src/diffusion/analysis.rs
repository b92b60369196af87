//! Intra-layer (points = SNRs) and inter-layer (points = layers) analyses.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{diffusion_distances, diffusion_map, DiffusionConfig, DiffusionEmbedding, DiffusionError, DistanceMatrix};
use crate::par;
use crate::regression::{ols_fit, spearman_rho, RegressionError, RegressionSummary};
use crate::tensor::{CentroidSet, LayerInfo, LATENT_BLOCK};

/// |DC1| at or below this everywhere marks a layer as degenerate.
const DEGENERATE_DC1: f64 = 1e-8;

/// Points of the per-layer map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntraPoints {
    /// One noise-type-averaged centroid per SNR.
    #[default]
    NoiseAveraged,
    /// One map per noise type; oriented DC1 and distances are averaged.
    PerNoise,
}

/// Layers entering the per-SNR maps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterPoints {
    #[default]
    FirstInBlock,
    AllSameDim,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntraLayerResult {
    pub layer_id: String,
    pub snrs: Vec<i32>,
    pub dc1: Vec<f64>,
    pub rho: f64,
    pub fit: RegressionSummary,
    pub eigenvalues: Vec<f64>,
    pub distances: DistanceMatrix,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcludedLayer {
    pub layer_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterLayerResult {
    pub snr_db: i32,
    pub layers: Vec<String>,
    pub excluded: Vec<ExcludedLayer>,
    /// Layer x layer diffusion distances.
    pub distances: DistanceMatrix,
    /// Distance of each layer's point to its own clean centroid (empty without clean references).
    pub to_clean: Vec<f64>,
}

fn centroid_grid(centroids: &CentroidSet) -> Vec<i32> {
    centroids.cells.keys().filter_map(|k| k.snr_db).collect::<BTreeSet<_>>().into_iter().collect()
}

fn stack(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

/// Flips DC1 so that it increases with SNR in rank terms.
fn orient_dc1(emb: &mut DiffusionEmbedding, snrs: &[f64]) {
    if let Ok(rho) = spearman_rho(&emb.dc1(), snrs) {
        if rho < 0.0 {
            emb.flip(0);
        }
    }
}

/// Diffusion map of one layer across the SNR grid.
pub fn intra_layer(
    centroids: &CentroidSet,
    layer_id: &str,
    grid: &[i32],
    config: &DiffusionConfig,
) -> Result<IntraLayerResult, DiffusionError> {
    config.validate()?;
    let snr_f: Vec<f64> = grid.iter().map(|&s| s as f64).collect();
    let labels: Vec<String> = grid.iter().map(|s| s.to_string()).collect();
    let missing = |what: &str, snr: i32| DiffusionError::IncompleteGrid(format!("layer {layer_id}: no {what} centroid at {snr} dB"));

    let maps: Vec<DiffusionEmbedding> = match config.intra_points {
        IntraPoints::NoiseAveraged => {
            let rows = grid
                .iter()
                .map(|&s| centroids.noise_averaged(layer_id, s).ok_or_else(|| missing("noisy", s)))
                .collect::<Result<Vec<_>, _>>()?;
            vec![diffusion_map(&stack(&rows), labels.clone(), config)?]
        }
        IntraPoints::PerNoise => {
            let noises = centroids.noise_types(layer_id);
            if noises.is_empty() {
                return Err(missing("noisy", grid.first().copied().unwrap_or_default()));
            }
            noises
                .iter()
                .map(|noise| {
                    let rows = grid
                        .iter()
                        .map(|&s| {
                            centroids
                                .get(&crate::tensor::CellKey::noisy(layer_id, noise, s))
                                .map(|c| c.vector.clone())
                                .ok_or_else(|| missing(noise, s))
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    diffusion_map(&stack(&rows), labels.clone(), config)
                })
                .collect::<Result<Vec<_>, _>>()?
        }
    };

    let m = maps.len() as f64;
    let n = grid.len();
    let mut dc1 = vec![0.0; n];
    let mut dist = DMatrix::zeros(n, n);
    let mut eigenvalues = vec![0.0; maps[0].eigenvalues.len()];
    for mut emb in maps {
        orient_dc1(&mut emb, &snr_f);
        dc1.iter_mut().zip(emb.dc1()).for_each(|(a, v)| *a += v / m);
        dist += diffusion_distances(&emb).values / m;
        eigenvalues.iter_mut().zip(&emb.eigenvalues).for_each(|(a, v)| *a += v / m);
    }

    let degenerate = dc1.iter().all(|v| v.abs() <= DEGENERATE_DC1);
    let (rho, fit) = if degenerate {
        let fit = RegressionSummary { slope: 0.0, intercept: 0.0, r_squared: 0.0, n, degenerate: true };
        (0.0, fit)
    } else {
        let rho = match spearman_rho(&snr_f, &dc1) {
            Ok(r) => r,
            Err(RegressionError::AllTied) => 0.0,
            Err(e) => return Err(e.into()),
        };
        (rho, ols_fit(&snr_f, &dc1)?)
    };
    Ok(IntraLayerResult {
        layer_id: layer_id.to_string(),
        snrs: grid.to_vec(),
        dc1,
        rho,
        fit,
        eigenvalues,
        distances: DistanceMatrix { labels, values: dist },
        degenerate,
    })
}

/// Chooses the layers of the per-SNR maps; the latent block is always left out.
fn inter_participants(
    centroids: &CentroidSet,
    layers: &[LayerInfo],
    config: &DiffusionConfig,
) -> Result<(Vec<LayerInfo>, Vec<ExcludedLayer>), DiffusionError> {
    let mut sorted = layers.to_vec();
    sorted.sort_by_key(|l| l.depth_index);
    let mut keep = Vec::new();
    let mut excluded = Vec::new();
    for l in sorted {
        if config.inter_layers == InterPoints::FirstInBlock && !l.first_in_block {
            continue;
        }
        if l.block == LATENT_BLOCK {
            excluded.push(ExcludedLayer { layer_id: l.layer_id, reason: "latent block".into() });
            continue;
        }
        keep.push(l);
    }
    let dim = |l: &LayerInfo| {
        centroids
            .cells
            .iter()
            .find(|(k, _)| k.layer_id == l.layer_id)
            .map(|(_, c)| c.vector.len())
            .ok_or_else(|| DiffusionError::IncompleteGrid(format!("layer {} has no centroids", l.layer_id)))
    };
    let Some(first) = keep.first() else {
        return Err(DiffusionError::NoLayers);
    };
    let expected = dim(first)?;
    for l in &keep {
        let found = dim(l)?;
        if found != expected {
            return Err(DiffusionError::DimensionMismatch { layer: l.layer_id.clone(), expected, found });
        }
    }
    Ok((keep, excluded))
}

fn clean_label(layer_id: &str) -> String {
    format!("{layer_id}@clean")
}

/// Diffusion map over the participating layers' centroids at one SNR.
pub fn inter_layer(
    centroids: &CentroidSet,
    layers: &[LayerInfo],
    snr_db: i32,
    config: &DiffusionConfig,
) -> Result<InterLayerResult, DiffusionError> {
    config.validate()?;
    let (keep, excluded) = inter_participants(centroids, layers, config)?;
    let ids: Vec<String> = keep.iter().map(|l| l.layer_id.clone()).collect();
    let mut rows = Vec::new();
    let mut labels = ids.clone();
    for id in &ids {
        rows.push(
            centroids
                .noise_averaged(id, snr_db)
                .ok_or_else(|| DiffusionError::IncompleteGrid(format!("layer {id}: no centroid at {snr_db} dB")))?,
        );
    }
    if config.inter_clean_reference {
        for id in &ids {
            let c = centroids
                .clean(id)
                .ok_or_else(|| DiffusionError::IncompleteGrid(format!("layer {id}: no clean centroid")))?;
            rows.push(c.vector.clone());
            labels.push(clean_label(id));
        }
    }
    let all = diffusion_distances(&diffusion_map(&stack(&rows), labels, config)?);
    let to_clean = if config.inter_clean_reference {
        ids.iter().map(|id| all.get(id, &clean_label(id)).expect("label present")).collect()
    } else {
        Vec::new()
    };
    Ok(InterLayerResult {
        snr_db,
        distances: all.submatrix(&ids).expect("labels present"),
        layers: ids,
        excluded,
        to_clean,
    })
}

fn io_err(path: &Path, source: std::io::Error) -> DiffusionError {
    DiffusionError::Io { path: path.display().to_string(), source }
}

/// Writes a labelled square matrix: header `label,<labels…>`, one row per label.
pub fn write_matrix_csv(m: &DistanceMatrix, path: &Path) -> Result<(), DiffusionError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(std::iter::once("label").chain(m.labels.iter().map(String::as_str)))?;
    for (i, label) in m.labels.iter().enumerate() {
        let row: Vec<String> = m.values.row(i).iter().map(|v| v.to_string()).collect();
        w.write_record(std::iter::once(label.as_str()).chain(row.iter().map(String::as_str)))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[derive(Serialize)]
struct IntraRow<'a> {
    layer_id: &'a str,
    snr_db: i32,
    dc1: f64,
    rho: f64,
    r2: f64,
}

/// Runs the intra-layer map for every layer and writes
/// `diffusion_intra.csv` plus one `diffusion_intra_dist_<layer>.csv` per layer.
pub fn run_intra(
    centroids: &CentroidSet,
    layers: &[LayerInfo],
    config: &DiffusionConfig,
    out_dir: &Path,
) -> Result<Vec<IntraLayerResult>, DiffusionError> {
    let grid = centroid_grid(centroids);
    let mut sorted = layers.to_vec();
    sorted.sort_by_key(|l| l.depth_index);
    let results = par::try_map(&sorted, |l| intra_layer(centroids, &l.layer_id, &grid, config))?;

    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let path = out_dir.join("diffusion_intra.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for r in &results {
        for (&snr_db, &dc1) in r.snrs.iter().zip(&r.dc1) {
            w.serialize(IntraRow { layer_id: &r.layer_id, snr_db, dc1, rho: r.rho, r2: r.fit.r_squared })?;
        }
        write_matrix_csv(&r.distances, &out_dir.join(format!("diffusion_intra_dist_{}.csv", r.layer_id)))?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    Ok(results)
}

#[derive(Serialize)]
struct ToCleanRow<'a> {
    snr_db: i32,
    layer_id: &'a str,
    distance: f64,
}

/// Runs the per-SNR inter-layer maps over the full grid and writes
/// `diffusion_inter_<snr>.csv` files (plus `diffusion_inter_to_clean.csv`).
pub fn run_inter(
    centroids: &CentroidSet,
    layers: &[LayerInfo],
    config: &DiffusionConfig,
    out_dir: &Path,
) -> Result<Vec<InterLayerResult>, DiffusionError> {
    let grid = centroid_grid(centroids);
    let results = par::try_map(&grid, |&s| inter_layer(centroids, layers, s, config))?;
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    for r in &results {
        write_matrix_csv(&r.distances, &out_dir.join(format!("diffusion_inter_{}.csv", r.snr_db)))?;
    }
    if config.inter_clean_reference {
        let path = out_dir.join("diffusion_inter_to_clean.csv");
        let mut w = csv::Writer::from_path(&path)?;
        for r in &results {
            for (id, &distance) in r.layers.iter().zip(&r.to_clean) {
                w.serialize(ToCleanRow { snr_db: r.snr_db, layer_id: id, distance })?;
            }
        }
        w.flush().map_err(|e| io_err(&path, e))?;
    }
    Ok(results)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntraSummary {
    pub layer_id: String,
    pub rho: f64,
    pub r_squared: f64,
    pub slope: f64,
    pub degenerate: bool,
    pub eigenvalues: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterSummary {
    pub layers: Vec<String>,
    pub excluded: Vec<ExcludedLayer>,
    pub snrs: Vec<i32>,
    pub representative_snrs: Vec<i32>,
}

/// Contents of `diffusion_report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionReport {
    pub config: DiffusionConfig,
    pub intra: Vec<IntraSummary>,
    pub inter: Option<InterSummary>,
}

impl DiffusionReport {
    pub fn new(config: &DiffusionConfig, intra: &[IntraLayerResult], inter: &[InterLayerResult]) -> DiffusionReport {
        DiffusionReport {
            config: config.clone(),
            intra: intra
                .iter()
                .map(|r| IntraSummary {
                    layer_id: r.layer_id.clone(),
                    rho: r.rho,
                    r_squared: r.fit.r_squared,
                    slope: r.fit.slope,
                    degenerate: r.degenerate,
                    eigenvalues: r.eigenvalues.clone(),
                })
                .collect(),
            inter: inter.first().map(|first| InterSummary {
                layers: first.layers.clone(),
                excluded: first.excluded.clone(),
                snrs: inter.iter().map(|r| r.snr_db).collect(),
                representative_snrs: config.representative_snrs.clone(),
            }),
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), DiffusionError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| io_err(path, e))
    }

    pub fn read(path: &Path) -> Result<DiffusionReport, DiffusionError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
