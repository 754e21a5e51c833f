use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use super::bootstrap::{bootstrap_ci, BootstrapCi};
use super::metrics::{baseline_mae, mae, margin_accuracy, r_squared, sliding_window_baseline};
use super::{binomial_test_one_tailed, StatsError};
use crate::data::ImageRecord;
use crate::seeds::{subseed, tag};

/// Predictions joined with their source records.
#[derive(Debug, Clone)]
pub struct ScoredRecord {
    pub record: ImageRecord,
    pub predicted_d: f64,
    pub actual_d: f64,
}

/// Non-empty set of scored records; the unit all metrics operate on.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    entries: Vec<ScoredRecord>,
}

impl PredictionSet {
    pub fn new(entries: Vec<ScoredRecord>) -> Result<Self, StatsError> {
        if entries.is_empty() {
            return Err(StatsError::EmptySample);
        }
        if entries
            .iter()
            .any(|e| !e.predicted_d.is_finite() || !e.actual_d.is_finite())
        {
            return Err(StatsError::NonFinite);
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ScoredRecord] {
        &self.entries
    }

    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.entries
            .iter()
            .map(|e| (e.predicted_d, e.actual_d))
            .collect()
    }

    pub fn actuals(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.actual_d).collect()
    }

    pub fn mae(&self) -> Result<f64, StatsError> {
        mae(&self.pairs())
    }

    pub fn r_squared(&self) -> Result<f64, StatsError> {
        r_squared(&self.pairs())
    }

    pub fn baseline_mae(&self) -> Result<f64, StatsError> {
        baseline_mae(&self.actuals())
    }

    pub fn margin_accuracy(&self, margin_d: f64) -> Result<f64, StatsError> {
        margin_accuracy(&self.pairs(), margin_d)
    }

    /// `image_path,actual_d,predicted_d` rows.
    pub fn write_predictions_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "image_path,actual_d,predicted_d")?;
        for e in &self.entries {
            writeln!(w, "{},{},{}", e.record.image_path, e.actual_d, e.predicted_d)?;
        }
        Ok(())
    }
}

/// Point estimate with a bootstrap 95% CI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub point: f64,
    pub ci: [f64; 2],
}

impl From<BootstrapCi> for Estimate {
    fn from(ci: BootstrapCi) -> Self {
        Estimate {
            point: ci.point,
            ci: [ci.lower, ci.upper],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginRow {
    pub margin: f64,
    pub model_acc: f64,
    pub baseline_acc: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceReport {
    pub n: usize,
    pub mae: Estimate,
    pub r2: Estimate,
    pub baseline_mae: Estimate,
    pub margins: Vec<MarginRow>,
}

/// Full evaluation report. Slice values are `null` when a slice matched no
/// records. Serialization order is fixed by field order, so report bytes are
/// stable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub mae: Estimate,
    pub r2: Estimate,
    pub baseline_mae: Estimate,
    pub margins: Vec<MarginRow>,
    pub slices: BTreeMap<String, Option<SliceReport>>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Record filters mirroring the disease-slice analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceSpec {
    All,
    NoAmd,
    NoCataractSurgery,
    NoAmdNoCataractSurgery,
}

impl SliceSpec {
    pub fn name(self) -> &'static str {
        match self {
            SliceSpec::All => "all",
            SliceSpec::NoAmd => "no_amd",
            SliceSpec::NoCataractSurgery => "no_cataract_surgery",
            SliceSpec::NoAmdNoCataractSurgery => "no_amd_no_cataract_surgery",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "all" => Some(SliceSpec::All),
            "no_amd" => Some(SliceSpec::NoAmd),
            "no_cataract_surgery" => Some(SliceSpec::NoCataractSurgery),
            "no_amd_no_cataract_surgery" => Some(SliceSpec::NoAmdNoCataractSurgery),
            _ => None,
        }
    }

    pub fn matches(self, record: &ImageRecord) -> bool {
        match self {
            SliceSpec::All => true,
            SliceSpec::NoAmd => record.has_amd == Some(false),
            SliceSpec::NoCataractSurgery => record.had_cataract_surgery == Some(false),
            SliceSpec::NoAmdNoCataractSurgery => {
                record.has_amd == Some(false) && record.had_cataract_surgery == Some(false)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub margins: Vec<f64>,
    pub n_resamples: usize,
    pub seed: u64,
    pub slices: Vec<SliceSpec>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            margins: vec![0.5, 1.0, 2.0],
            n_resamples: super::bootstrap::DEFAULT_RESAMPLES,
            seed: 0,
            slices: Vec::new(),
        }
    }
}

fn core_report(
    entries: &[ScoredRecord],
    opts: &EvalOptions,
    slice_index: u64,
) -> Result<SliceReport, StatsError> {
    let pairs: Vec<(f64, f64)> = entries.iter().map(|e| (e.predicted_d, e.actual_d)).collect();
    let actuals: Vec<f64> = entries.iter().map(|e| e.actual_d).collect();
    let n = entries.len();
    let seed_for = |metric: u64| subseed(opts.seed, tag::BOOTSTRAP, slice_index * 8 + metric);

    let mae_est = bootstrap_ci(&pairs, mae, opts.n_resamples, seed_for(0))?;
    let r2_est = bootstrap_ci(&pairs, r_squared, opts.n_resamples, seed_for(1))?;
    let baseline_est = bootstrap_ci(
        &actuals,
        baseline_mae,
        opts.n_resamples,
        seed_for(2),
    )?;

    let mut rows = Vec::with_capacity(opts.margins.len());
    for &margin in &opts.margins {
        let model_acc = margin_accuracy(&pairs, margin)?;
        let baseline_acc = sliding_window_baseline(&actuals, margin)?;
        let successes = pairs
            .iter()
            .filter(|(p, a)| (p - a).abs() <= margin)
            .count() as u64;
        // The window baseline is at least 1/n; it can reach 1.0, in which
        // case no count is ever significant.
        let p_value = if baseline_acc < 1.0 {
            binomial_test_one_tailed(successes, n as u64, baseline_acc)?
        } else {
            1.0
        };
        rows.push(MarginRow {
            margin,
            model_acc,
            baseline_acc,
            p_value,
        });
    }

    Ok(SliceReport {
        n,
        mae: mae_est.into(),
        r2: r2_est.into(),
        baseline_mae: baseline_est.into(),
        margins: rows,
    })
}

/// The full statistical report: MAE/R^2/constant-baseline with bootstrap
/// CIs, per-margin model accuracy against the sliding-window baseline with
/// one-tailed binomial p-values, and one sub-report per requested slice.
pub fn evaluate(set: &PredictionSet, opts: &EvalOptions) -> Result<EvalReport, StatsError> {
    let whole = core_report(set.entries(), opts, 0)?;
    let mut slices = BTreeMap::new();
    for (i, spec) in opts.slices.iter().enumerate() {
        let subset: Vec<ScoredRecord> = set
            .entries()
            .iter()
            .filter(|e| spec.matches(&e.record))
            .cloned()
            .collect();
        let value = if subset.is_empty() {
            None
        } else {
            Some(core_report(&subset, opts, i as u64 + 1)?)
        };
        slices.insert(spec.name().to_string(), value);
    }
    Ok(EvalReport {
        n: whole.n,
        mae: whole.mae,
        r2: whole.r2,
        baseline_mae: whole.baseline_mae,
        margins: whole.margins,
        slices,
    })
}
