//! Desk-scale pipeline for predicting refractive error (in diopters) from
//! fundus-like retinal images.
//!
//! The crate is organized around the stages of that pipeline:
//!
//! - [`autodiff`]: a dense f64 tensor engine with reverse-mode automatic
//!   differentiation, just large enough to express the model below.
//! - [`data`]: manifest and PPM/PGM I/O, quality filtering, preprocessing,
//!   and a synthetic fundus generator that plants a recoverable
//!   refractive-error signal in the foveal region.
//! - [`model`]: an attention-augmented residual CNN regressor emitting one
//!   diopter prediction and one spatial attention grid per image.
//! - [`train`]: L1-objective SGD with momentum, tune-set early stopping,
//!   and ensemble orchestration.
//! - [`stats`]: MAE / R^2 / margin accuracies, constant-mean and
//!   sliding-window baselines, bootstrap confidence intervals, and exact
//!   one-tailed binomial tests.
//! - [`atlas`]: attention heatmap extraction, cohort aggregation, and
//!   rendering.
//!
//! Everything is deterministic given explicit seeds; there is no ambient
//! entropy anywhere in the crate.

pub mod atlas;
pub mod autodiff;
pub mod data;
pub mod model;
pub mod seeds;
pub mod stats;
pub mod train;

pub use atlas::{aggregate_maps, extract_heatmap, Atlas, BandScheme, HeatmapImage, SeBand};
pub use autodiff::{Graph, NodeId, Tensor, TensorError};
pub use data::{
    generate_synthetic_dataset, load_manifest, preprocess, quality_filter, spherical_equivalent,
    DataError, Eye, GeneratorConfig, ImageRecord, PreprocessedImage, RefractionLabel, RgbImage,
    Split,
};
pub use model::{ensemble_predict, AttentionResNet, AttentionWeights, ModelConfig, Target};
pub use stats::{
    baseline_mae, binomial_test_one_tailed, bootstrap_ci, evaluate, mae, margin_accuracy,
    r_squared, sliding_window_baseline, EvalOptions, EvalReport, PredictionSet, StatsError,
};
pub use train::{
    samples_for_target, target_value, train_ensemble, train_one, StopReason, TrainConfig,
    TrainError, TrainLog, TrainSample,
};
