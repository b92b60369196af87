//! Activation containers, pooling into embeddings, and centroids.

mod embeddings;
mod io;
mod manifest;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use embeddings::{
    build_centroids, pool_activations, read_embeddings, write_embeddings, CellKey, Centroid,
    CentroidSet, Embedding, EmbeddingSet, PoolConfig, WindowAggregation, CLEAN_CONDITION,
};
pub use io::{decode_tensor, encode_tensor, read_tensor, write_tensor, TensorFormat};
pub use manifest::{ActivationEntry, ActivationsManifest, LayerInfo, LATENT_BLOCK};

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("unrecognised container magic")]
    BadMagic,
    #[error("unsupported dtype {0}")]
    UnsupportedDtype(String),
    #[error("shape/payload mismatch: {0}")]
    ShapeOverflow(String),
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error("token axis is empty")]
    EmptyAxis,
    #[error("token axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("non-finite activation value")]
    NonFinite,
    #[error("layer {layer}: dimension {found} differs from {expected}")]
    DimensionMismatch { layer: String, expected: usize, found: usize },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TensorError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> TensorError {
        TensorError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Promotes to `f64`; all downstream math runs in double precision.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }
}

/// Dense C-order array as stored in a container file.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor { shape, data: TensorData::F64(data) }
    }
}

/// A tensor captured at one layer. Axis names live in the manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTensor {
    pub layer_id: String,
    pub tensor: Tensor,
}

/// Mean over `token_axis`, remaining axes flattened in C order.
pub fn global_average_pool(t: &Tensor, token_axis: usize) -> Result<Vec<f64>, TensorError> {
    let rank = t.shape.len();
    if token_axis >= rank {
        return Err(TensorError::InvalidAxis { axis: token_axis, rank });
    }
    let tokens = t.shape[token_axis];
    if tokens == 0 {
        return Err(TensorError::EmptyAxis);
    }
    let outer: usize = t.shape[..token_axis].iter().product();
    let inner: usize = t.shape[token_axis + 1..].iter().product();
    let values = t.data.to_f64();
    if values.len() != outer * tokens * inner {
        return Err(TensorError::ShapeOverflow(format!("shape {:?} vs {} values", t.shape, values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(TensorError::NonFinite);
    }
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        let acc = &mut out[o * inner..(o + 1) * inner];
        for tok in 0..tokens {
            let row = &values[(o * tokens + tok) * inner..(o * tokens + tok + 1) * inner];
            acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
        }
        acc.iter_mut().for_each(|a| *a /= tokens as f64);
    }
    Ok(out)
}
