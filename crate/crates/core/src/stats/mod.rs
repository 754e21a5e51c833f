//! Statistical evaluation suite: errors and accuracies, two baselines,
//! nonparametric bootstrap confidence intervals, exact one-tailed binomial
//! tests, and slice-wise reporting.

mod binomial;
mod bootstrap;
mod metrics;
mod report;

pub use binomial::binomial_test_one_tailed;
pub use bootstrap::{
    bootstrap_ci, percentile_linear, BootstrapCi, CI_LOWER_PERCENTILE, CI_UPPER_PERCENTILE,
    DEFAULT_RESAMPLES, MAX_SKIP_FRACTION,
};
pub use metrics::{baseline_mae, mae, margin_accuracy, r_squared, sliding_window_baseline};
pub use report::{
    evaluate, Estimate, EvalOptions, EvalReport, MarginRow, PredictionSet, ScoredRecord,
    SliceReport, SliceSpec,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("need at least {needed} values")]
    NotEnoughData { needed: usize },
    #[error("actual values have zero variance")]
    ZeroVariance,
    #[error("margin {margin} must be positive")]
    InvalidMargin { margin: f64 },
    #[error("k={k} exceeds n={n}")]
    InvalidBounds { k: u64, n: u64 },
    #[error("null probability {p} outside (0, 1)")]
    InvalidProbability { p: f64 },
    #[error("{skipped} of {resamples} bootstrap resamples failed")]
    TooManySkips { skipped: usize, resamples: usize },
}
