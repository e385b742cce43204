//! Nonlinear representation learning for functional data.
//!
//! This crate trains a recurrent encoder/decoder with a classifier head on
//! curves observed over a common grid, so one feature vector per curve
//! serves both reconstruction and classification. A stochastic corruption
//! layer (random discarding plus Gaussian noise) makes the representations
//! robust to missing and noisy observations. A discretized FPCA baseline,
//! logistic-regression evaluation and the repeated-split and sparsity
//! protocols round out the toolkit.
//!
//! Modules
//! - [`linalg`]: dense f64 matrices, activations, norms, Jacobi eigensolver
//! - [`dataset`]: TSV/CSV ingestion, masks, splits, downsampling
//! - [`corruption`]: the training-time corruption layer
//! - [`model`]: encoder / decoder / classifier forward passes
//! - [`train`]: losses, backpropagation through time, optimizers
//! - [`fpca`]: functional principal component baseline
//! - [`eval`]: logistic regression, diagnostics, experiment protocols
//! - [`checkpoint`]: the JSON model container
//! - [`simulate`]: synthetic data generators
//! - [`rng`]: deterministic keyed random streams

// Indexed loops read better than iterator chains in the numerical kernels.
#![allow(clippy::needless_range_loop)]

pub mod checkpoint;
pub mod corruption;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fpca;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod simulate;
pub mod train;

pub use checkpoint::{Checkpoint, FpcaCheckpoint, FunnolCheckpoint};
pub use corruption::{corrupt, CorruptionConfig};
pub use dataset::{
    downsample, load_ucr, split, standardize, ChannelStats, Dataset, FunctionalSample, SplitSpec,
};
pub use error::{Error, Result};
pub use eval::{
    accuracy, bound_diagnostic, empirical_margin_loss, logreg_fit, logreg_predict,
    run_sparsity_experiment, run_split_protocol, LogisticModel, Method, ProtocolConfig,
    ProtocolResult,
};
pub use fpca::{fpc_scores, fpca_fit, fpca_reconstruct, impute_linear, FpcaModel};
pub use linalg::{sym_eigen, Activation, Matrix, Vector};
pub use model::{
    classify, decode, encode, forward, representation, ActivationSet, CellKind, Dims, ForwardTrace,
    FunnolParams,
};
pub use train::{
    backward, class_loss, clip_gradients, fit, gradient_pathology_probe, recon_loss, total_loss,
    ClipMode, FunnolGradients, OptimizerKind, TrainConfig, TrainReport,
};
