//! Least-squares trends and rank correlation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cka::{CkaRecord, NoiseCkaRecord};
use crate::par;
use crate::tensor::LayerInfo;

#[derive(Debug, Error, PartialEq)]
pub enum RegressionError {
    #[error("x and y lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("predictor is constant")]
    ConstantPredictor,
    #[error("all values tied; rank correlation undefined")]
    AllTied,
    #[error("non-finite input")]
    NonFinite,
    #[error("incomplete SNR grid: {0}")]
    IncompleteGrid(String),
}

/// Result of a straight-line fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionSummary {
    pub slope: f64,
    /// Fitted value at x = 0.
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
    /// Set when y has zero variance; `r_squared` is then reported as 0.
    pub degenerate: bool,
}

fn check_pair(x: &[f64], y: &[f64], need: usize) -> Result<(), RegressionError> {
    if x.len() != y.len() {
        return Err(RegressionError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < need {
        return Err(RegressionError::TooFewPoints { need, got: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(RegressionError::NonFinite);
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Ordinary least squares of `y` on `x`.
pub fn ols_fit(x: &[f64], y: &[f64]) -> Result<RegressionSummary, RegressionError> {
    check_pair(x, y, 3)?;
    if x.iter().all(|&v| v == x[0]) {
        return Err(RegressionError::ConstantPredictor);
    }
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let degenerate = ss_tot == 0.0 || y.iter().all(|&v| v == y[0]);
    let r_squared = if degenerate {
        0.0
    } else {
        let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(RegressionSummary { slope, intercept, r_squared, n: x.len(), degenerate })
}

/// 1-based ranks; ties share the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        order[i..=j].iter().for_each(|&k| ranks[k] = r);
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64, RegressionError> {
    check_pair(x, y, 2)?;
    pearson(&average_ranks(x), &average_ranks(y)).ok_or(RegressionError::AllTied)
}

/// How per-noise CKA curves are combined before the per-layer fit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Fit the noise-averaged CKA curve.
    #[default]
    NoiseAveraged,
    /// Fit each noise type separately and average slope, intercept and R².
    PerNoiseMean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerFit {
    pub layer: LayerInfo,
    pub fit: RegressionSummary,
    pub is_local_slope_max: bool,
}

/// One line of `cka_fit.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub layer_id: String,
    pub block: String,
    pub depth_index: usize,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub is_skip_input: bool,
    pub is_skip_output: bool,
    pub is_local_slope_max: bool,
    pub degenerate: bool,
}

impl From<&LayerFit> for FitRecord {
    fn from(f: &LayerFit) -> FitRecord {
        FitRecord {
            layer_id: f.layer.layer_id.clone(),
            block: f.layer.block.clone(),
            depth_index: f.layer.depth_index,
            slope: f.fit.slope,
            intercept: f.fit.intercept,
            r_squared: f.fit.r_squared,
            is_skip_input: f.layer.skip_input,
            is_skip_output: f.layer.skip_output,
            is_local_slope_max: f.is_local_slope_max,
            degenerate: f.fit.degenerate,
        }
    }
}

/// Layer descriptions recovered from `cka.csv` when no manifest is at hand (no skip tags).
pub fn layers_from_records(records: &[CkaRecord]) -> Vec<LayerInfo> {
    let mut seen: BTreeMap<usize, LayerInfo> = BTreeMap::new();
    let mut first_blocks = BTreeSet::new();
    for r in records {
        seen.entry(r.depth_index).or_insert_with(|| LayerInfo {
            layer_id: r.layer_id.clone(),
            block: r.block.clone(),
            depth_index: r.depth_index,
            first_in_block: false,
            token_axis: 0,
            skip_input: false,
            skip_output: false,
        });
    }
    for l in seen.values_mut() {
        l.first_in_block = first_blocks.insert(l.block.clone());
    }
    seen.into_values().collect()
}

/// Curve of (snr, cka) points, checked against the full grid.
fn curve(points: BTreeMap<i32, f64>, grid: &BTreeSet<i32>, what: &str) -> Result<(Vec<f64>, Vec<f64>), RegressionError> {
    if !points.keys().eq(grid.iter()) {
        let missing: Vec<_> = grid.iter().filter(|s| !points.contains_key(s)).collect();
        return Err(RegressionError::IncompleteGrid(format!("{what} lacks SNRs {missing:?}")));
    }
    Ok(points.into_iter().map(|(s, c)| (s as f64, c)).unzip())
}

/// Fits CKA against SNR for every layer, in depth order.
///
/// `per_noise` is only consulted in [`FitMode::PerNoiseMean`].
pub fn profile_layers(
    records: &[CkaRecord],
    per_noise: &[NoiseCkaRecord],
    layers: &[LayerInfo],
    mode: FitMode,
) -> Result<Vec<LayerFit>, RegressionError> {
    let mut layers = layers.to_vec();
    layers.sort_by_key(|l| l.depth_index);
    let grid: BTreeSet<i32> = records.iter().map(|r| r.snr_db).collect();

    let fits = par::try_map(&layers, |layer| {
        let id = &layer.layer_id;
        match mode {
            FitMode::NoiseAveraged => {
                let pts = records.iter().filter(|r| &r.layer_id == id).map(|r| (r.snr_db, r.cka)).collect();
                let (x, y) = curve(pts, &grid, &format!("layer {id}"))?;
                ols_fit(&x, &y)
            }
            FitMode::PerNoiseMean => {
                let mut by_noise: BTreeMap<&str, BTreeMap<i32, f64>> = BTreeMap::new();
                for r in per_noise.iter().filter(|r| &r.layer_id == id) {
                    by_noise.entry(&r.noise_type).or_default().insert(r.snr_db, r.cka);
                }
                if by_noise.is_empty() {
                    return Err(RegressionError::IncompleteGrid(format!("layer {id} has no per-noise CKA")));
                }
                let k = by_noise.len() as f64;
                let mut acc = RegressionSummary { slope: 0.0, intercept: 0.0, r_squared: 0.0, n: 0, degenerate: false };
                for (noise, pts) in by_noise {
                    let (x, y) = curve(pts, &grid, &format!("layer {id} / {noise}"))?;
                    let f = ols_fit(&x, &y)?;
                    acc.slope += f.slope / k;
                    acc.intercept += f.intercept / k;
                    acc.r_squared += f.r_squared / k;
                    acc.n = f.n;
                    acc.degenerate |= f.degenerate;
                }
                Ok(acc)
            }
        }
    })?;

    Ok(layers
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let neighbour = |j: Option<usize>| {
                j.filter(|&j| j < layers.len() && layers[j].block == layer.block).map(|j| fits[j].slope)
            };
            let nbrs: Vec<f64> = [neighbour(i.checked_sub(1)), neighbour(Some(i + 1))].into_iter().flatten().collect();
            let is_local_slope_max = !nbrs.is_empty() && nbrs.iter().all(|&s| fits[i].slope > s);
            LayerFit { layer: layer.clone(), fit: fits[i], is_local_slope_max }
        })
        .collect())
}
