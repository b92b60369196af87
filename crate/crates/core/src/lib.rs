//! Probing toolkit for speech-enhancement representations under SNR sweeps.
//!
//! The crate is organised as a pipeline:
//!
//! - [`audio`]: deterministic noisy-mixture generation (trim, seeded noise
//!   segments, SNR scaling, BS.1770 loudness normalisation, windowing).
//! - [`tensor`]: activation containers (NPY / TNSR), global average pooling,
//!   embedding sets and per-cell centroids.
//! - [`cka`]: linear CKA between clean and noisy embeddings with bootstrap
//!   confidence intervals across noise types.
//! - [`regression`]: OLS and Spearman statistics, per-layer CKA-vs-SNR fits.
//! - [`diffusion`]: diffusion maps over centroids, intra-layer DC1
//!   trajectories and inter-layer diffusion-distance matrices.
//! - [`report`]: CSV tables and self-contained SVG figures.
//! - [`pipeline`]: config-driven orchestration used by the `snrprobe` binary.

pub mod audio;
pub mod cka;
pub mod cli;
pub mod diffusion;
pub mod fixture;
pub mod hash;
pub mod par;
pub mod pipeline;
pub mod regression;
pub mod report;
pub mod tensor;

pub use audio::{AudioClip, AudioError};
pub use tensor::{ActivationTensor, CentroidSet, EmbeddingSet, TensorError};





pub use cka::{linear_cka, CkaConfig, CkaPoint};
pub use diffusion::{DiffusionConfig, DiffusionEmbedding};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineError};
