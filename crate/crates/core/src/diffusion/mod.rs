//! Diffusion maps over small point clouds (layer or SNR centroids).
//!
//! The transition matrix `P = D⁻¹W` is diagonalised through its symmetric
//! conjugate `S = D^{-1/2} W D^{-1/2}`, so the spectrum is real and the
//! right eigenvectors are recovered as `ψ = v / √π`.

mod analysis;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regression::RegressionError;

pub use analysis::{
    inter_layer, intra_layer, run_inter, run_intra, write_matrix_csv, DiffusionReport, ExcludedLayer, InterLayerResult,
    InterPoints, IntraLayerResult, IntraPoints,
};

/// Tolerance on the trivial eigenpair (λ = 1, constant ψ).
pub const TRIVIAL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("kernel bandwidth must be positive and finite, got {0}")]
    BadEpsilon(f64),
    #[error("point {0} has zero affinity to every point")]
    ZeroRow(usize),
    #[error("eigendecomposition failed: {0}")]
    EigenFailure(String),
    #[error("eigendecomposition did not converge")]
    NonConvergence,
    #[error("invalid diffusion config: {0}")]
    InvalidConfig(String),
    #[error("incomplete SNR grid: {0}")]
    IncompleteGrid(String),
    #[error("layer {layer}: dimension {found} differs from {expected}")]
    DimensionMismatch { layer: String, expected: usize, found: usize },
    #[error("no layers available for the inter-layer map")]
    NoLayers,
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Kernel bandwidth selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Epsilon {
    /// Median of the strictly positive pairwise squared distances.
    #[default]
    Median,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    pub epsilon: Epsilon,
    pub n_coords: usize,
    pub time: u32,
    pub intra_points: IntraPoints,
    pub inter_layers: InterPoints,
    /// Also embed each participating layer's clean centroid in the per-SNR maps.
    pub inter_clean_reference: bool,
    /// SNRs drawn as inter-layer heatmaps; the CSVs always cover the full grid.
    pub representative_snrs: Vec<i32>,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            epsilon: Epsilon::Median,
            n_coords: 5,
            time: 1,
            intra_points: IntraPoints::NoiseAveraged,
            inter_layers: InterPoints::FirstInBlock,
            inter_clean_reference: true,
            representative_snrs: vec![-10, -5, 0, 10, 20, 30],
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        if let Epsilon::Fixed(e) = self.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return Err(DiffusionError::BadEpsilon(e));
            }
        }
        if self.n_coords < 1 {
            return Err(DiffusionError::InvalidConfig("n_coords must be >= 1".into()));
        }
        if self.time < 1 {
            return Err(DiffusionError::InvalidConfig("time must be >= 1".into()));
        }
        Ok(())
    }
}

/// Squared Euclidean distances between rows, via the expanded form on
/// column-centred data and clamped at zero.
pub fn pairwise_sq_dists(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut xc = x.clone();
    for mut col in xc.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    let g = &xc * xc.transpose();
    DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { (g[(i, i)] + g[(j, j)] - 2.0 * g[(i, j)]).max(0.0) })
}

/// Median of the strictly positive off-diagonal squared distances (1.0 if none).
pub fn median_epsilon(d2: &DMatrix<f64>) -> f64 {
    let n = d2.nrows();
    let mut v: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| d2[(i, j)]).filter(|&d| d > 0.0).collect();
    if v.is_empty() {
        return 1.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        (v[m / 2 - 1] + v[m / 2]) / 2.0
    }
}

pub fn gaussian_affinity(d2: &DMatrix<f64>, epsilon: f64) -> Result<DMatrix<f64>, DiffusionError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(DiffusionError::BadEpsilon(epsilon));
    }
    let n = d2.nrows();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            // symmetric by construction even if d2 carries rounding asymmetry
            let d = 0.5 * (d2[(i, j)] + d2[(j, i)]);
            (-d / epsilon).exp()
        }
    }))
}

/// Row-normalises `W` into a transition matrix; also returns the row sums.
pub fn markov_normalize(w: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>), DiffusionError> {
    let degrees: Vec<f64> = w.row_iter().map(|r| r.sum()).collect();
    if let Some(i) = degrees.iter().position(|&d| !(d > 0.0)) {
        return Err(DiffusionError::ZeroRow(i));
    }
    let p = DMatrix::from_fn(w.nrows(), w.ncols(), |i, j| w[(i, j)] / degrees[i]);
    Ok((p, degrees))
}

/// Eigen-coordinates of a diffusion process.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionEmbedding {
    pub labels: Vec<String>,
    /// Nontrivial eigenvalues, ordered by descending |λ^t|.
    pub eigenvalues: Vec<f64>,
    /// Right eigenvectors ψ (points × k), π-orthonormal.
    pub psi: DMatrix<f64>,
    /// Diffusion coordinates λ^t·ψ (points × k).
    pub coords: DMatrix<f64>,
    /// Stationary distribution π.
    pub stationary: Vec<f64>,
    pub time: u32,
}

impl DiffusionEmbedding {
    /// First diffusion coordinate.
    pub fn dc1(&self) -> Vec<f64> {
        self.coords.column(0).iter().copied().collect()
    }

    pub fn flip(&mut self, coord: usize) {
        self.psi.column_mut(coord).neg_mut();
        self.coords.column_mut(coord).neg_mut();
    }
}

/// Diagonalises the transition matrix `p` (row sums `degrees` of the symmetric
/// affinity it came from) and keeps up to `n_coords` nontrivial coordinates.
pub fn diffusion_embed(
    p: &DMatrix<f64>,
    degrees: &[f64],
    n_coords: usize,
    time: u32,
) -> Result<DiffusionEmbedding, DiffusionError> {
    let n = p.nrows();
    if n < 2 {
        return Err(DiffusionError::TooFewPoints(n));
    }
    let total: f64 = degrees.iter().sum();
    let pi: Vec<f64> = degrees.iter().map(|d| d / total).collect();
    let sq: Vec<f64> = degrees.iter().map(|d| d.sqrt()).collect();
    // S = D^{1/2} P D^{-1/2}, symmetrised against rounding
    let s = DMatrix::from_fn(n, n, |i, j| {
        0.5 * (sq[i] * p[(i, j)] / sq[j] + sq[j] * p[(j, i)] / sq[i])
    });
    let eig = SymmetricEigen::try_new(s, f64::EPSILON, 1000 * n).ok_or(DiffusionError::NonConvergence)?;
    if eig.eigenvalues.iter().any(|l| !l.is_finite() || l.abs() > 1.0 + 1e-10) {
        return Err(DiffusionError::EigenFailure(format!("spectrum outside [-1, 1]: {:?}", eig.eigenvalues.as_slice())));
    }

    let sqrt_pi: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
    let psi_all = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, j)] / sqrt_pi[i]);

    // The trivial pair is the eigenvector aligned with √π.
    let alignment = |j: usize| -> f64 { (0..n).map(|i| eig.eigenvectors[(i, j)] * sqrt_pi[i]).sum::<f64>().abs() };
    let trivial = (0..n).max_by(|&a, &b| alignment(a).total_cmp(&alignment(b))).expect("n >= 2");
    let lambda0 = eig.eigenvalues[trivial];
    let psi0 = psi_all.column(trivial);
    let spread = psi0.iter().map(|v| (v.abs() - 1.0).abs()).fold(0.0, f64::max)
        .max(psi0.iter().map(|v| (v - psi0[0]).abs()).fold(0.0, f64::max));
    if (lambda0 - 1.0).abs() > TRIVIAL_TOLERANCE || spread > TRIVIAL_TOLERANCE {
        return Err(DiffusionError::EigenFailure(format!(
            "trivial eigenpair not found (lambda {lambda0}, psi spread {spread:e})"
        )));
    }

    let t = time as i32;
    let mut order: Vec<usize> = (0..n).filter(|&j| j != trivial).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b].powi(t).abs().total_cmp(&eig.eigenvalues[a].powi(t).abs()).then(
            eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]),
        )
    });
    order.truncate(n_coords.min(n - 1));

    let k = order.len();
    let eigenvalues: Vec<f64> = order.iter().map(|&j| eig.eigenvalues[j]).collect();
    let mut psi = DMatrix::from_fn(n, k, |i, c| psi_all[(i, order[c])]);
    for mut col in psi.column_iter_mut() {
        let lead = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if lead < 0.0 {
            col.neg_mut();
        }
    }
    let coords = DMatrix::from_fn(n, k, |i, c| eigenvalues[c].powi(t) * psi[(i, c)]);
    Ok(DiffusionEmbedding {
        labels: (0..n).map(|i| i.to_string()).collect(),
        eigenvalues,
        psi,
        coords,
        stationary: pi,
        time,
    })
}

/// Full map from raw points: distances, bandwidth, kernel, normalisation, spectrum.
pub fn diffusion_map(points: &DMatrix<f64>, labels: Vec<String>, config: &DiffusionConfig) -> Result<DiffusionEmbedding, DiffusionError> {
    config.validate()?;
    let n = points.nrows();
    if n < 2 {
        return Err(DiffusionError::TooFewPoints(n));
    }
    let d2 = pairwise_sq_dists(points);
    let eps = match config.epsilon {
        Epsilon::Median => median_epsilon(&d2),
        Epsilon::Fixed(e) => e,
    };
    let (p, degrees) = markov_normalize(&gaussian_affinity(&d2, eps)?)?;
    let mut emb = diffusion_embed(&p, &degrees, config.n_coords, config.time)?;
    emb.labels = labels;
    Ok(emb)
}

/// Symmetric matrix of distances between labelled points.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    pub labels: Vec<String>,
    pub values: DMatrix<f64>,
}

impl DistanceMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == a)?;
        let j = self.labels.iter().position(|l| l == b)?;
        Some(self.values[(i, j)])
    }

    /// Restriction to the given labels, in that order.
    pub fn submatrix(&self, labels: &[String]) -> Option<DistanceMatrix> {
        let idx: Option<Vec<usize>> = labels.iter().map(|l| self.labels.iter().position(|x| x == l)).collect();
        let idx = idx?;
        Some(DistanceMatrix {
            labels: labels.to_vec(),
            values: DMatrix::from_fn(idx.len(), idx.len(), |i, j| self.values[(idx[i], idx[j])]),
        })
    }
}

/// Euclidean distances in diffusion space over the retained coordinates.
pub fn diffusion_distances(emb: &DiffusionEmbedding) -> DistanceMatrix {
    let n = emb.coords.nrows();
    let mut values = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let d = (emb.coords.row(i) - emb.coords.row(j)).norm();
            values[(i, j)] = d;
            values[(j, i)] = d;
        }
    }
    DistanceMatrix { labels: emb.labels.clone(), values }
}
