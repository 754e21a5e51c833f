use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::StatsError;

/// Resample count used throughout the pipeline.
pub const DEFAULT_RESAMPLES: usize = 2000;
/// Percentiles reported as the 95% confidence interval.
pub const CI_LOWER_PERCENTILE: f64 = 2.5;
pub const CI_UPPER_PERCENTILE: f64 = 97.5;
/// A bootstrap run fails if more than this fraction of resamples is skipped.
pub const MAX_SKIP_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapCi {
    pub lower: f64,
    pub point: f64,
    pub upper: f64,
    /// Resamples on which the metric failed (skip-and-count policy).
    pub skipped: usize,
}

/// Percentile by linear interpolation between the closest order statistics
/// of an ascending-sorted slice.
pub fn percentile_linear(sorted: &[f64], pct: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = rank - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Nonparametric bootstrap 95% CI: draw `n_resamples` resamples of the same
/// size with replacement, evaluate the metric on each, and report the 2.5th
/// and 97.5th percentiles around the full-sample point estimate.
///
/// Each resample draws from its own ChaCha stream (seed, resample index), so
/// results do not depend on evaluation order. A metric failure on a resample
/// is skipped and counted; more than [`MAX_SKIP_FRACTION`] skips is an error.
pub fn bootstrap_ci<T: Clone>(
    sample: &[T],
    metric: impl Fn(&[T]) -> Result<f64, StatsError>,
    n_resamples: usize,
    seed: u64,
) -> Result<BootstrapCi, StatsError> {
    if sample.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if n_resamples < 2 {
        return Err(StatsError::NotEnoughData { needed: 2 });
    }
    let point = metric(sample)?;
    let mut values = Vec::with_capacity(n_resamples);
    let mut skipped = 0usize;
    let mut resample = Vec::with_capacity(sample.len());
    for r in 0..n_resamples {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        resample.clear();
        for _ in 0..sample.len() {
            resample.push(sample[rng.random_range(0..sample.len())].clone());
        }
        match metric(&resample) {
            Ok(v) if v.is_finite() => values.push(v),
            _ => skipped += 1,
        }
    }
    if skipped as f64 > MAX_SKIP_FRACTION * n_resamples as f64 {
        return Err(StatsError::TooManySkips {
            skipped,
            resamples: n_resamples,
        });
    }
    values.sort_unstable_by(f64::total_cmp);
    Ok(BootstrapCi {
        lower: percentile_linear(&values, CI_LOWER_PERCENTILE),
        point,
        upper: percentile_linear(&values, CI_UPPER_PERCENTILE),
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(xs: &[f64]) -> Result<f64, StatsError> {
        if xs.is_empty() {
            return Err(StatsError::EmptySample);
        }
        Ok(xs.iter().sum::<f64>() / xs.len() as f64)
    }

    #[test]
    fn constant_sample_has_degenerate_interval() {
        let sample = vec![4.5; 12];
        let ci = bootstrap_ci(&sample, mean, 200, 7).unwrap();
        assert_eq!((ci.lower, ci.point, ci.upper), (4.5, 4.5, 4.5));
        assert_eq!(ci.skipped, 0);
    }

    #[test]
    fn two_point_sample_hits_both_extremes() {
        // Resamples of [0, 1] have means {0, 0.5, 1} with probabilities
        // {1/4, 1/2, 1/4}; at 2000 draws the extreme percentiles reach the
        // extreme values.
        let ci = bootstrap_ci(&[0.0, 1.0], mean, DEFAULT_RESAMPLES, 3).unwrap();
        assert_eq!(ci.lower, 0.0);
        assert_eq!(ci.upper, 1.0);
        assert_eq!(ci.point, 0.5);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let sample: Vec<f64> = (0..40).map(|i| (i as f64 * 0.713).sin()).collect();
        let a = bootstrap_ci(&sample, mean, 500, 11).unwrap();
        let b = bootstrap_ci(&sample, mean, 500, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn percentile_interpolates_between_order_statistics() {
        let sorted = [10.0, 20.0, 30.0, 40.0];
        assert_eq!(percentile_linear(&sorted, 0.0), 10.0);
        assert_eq!(percentile_linear(&sorted, 100.0), 40.0);
        assert_eq!(percentile_linear(&sorted, 50.0), 25.0);
        assert!((percentile_linear(&sorted, 2.5) - 10.75).abs() < 1e-12);
    }

    #[test]
    fn all_failures_exceed_skip_budget() {
        let fail = |_: &[f64]| -> Result<f64, StatsError> { Err(StatsError::ZeroVariance) };
        let sample = vec![1.0, 1.0];
        // Point estimate itself fails first.
        assert!(bootstrap_ci(&sample, fail, 100, 0).is_err());
    }

    #[test]
    fn skip_fraction_boundary() {
        // Metric fails only on all-equal resamples; with a small sample and
        // enough resamples that happens often enough to error out.
        let sample = vec![0.0, 1.0];
        let finicky = |xs: &[f64]| -> Result<f64, StatsError> {
            if xs.iter().all(|&x| x == xs[0]) {
                Err(StatsError::ZeroVariance)
            } else {
                Ok(xs.iter().sum::<f64>() / xs.len() as f64)
            }
        };
        // Half the resamples of a 2-point sample are all-equal.
        let err = bootstrap_ci(&sample, finicky, 2000, 5).unwrap_err();
        assert!(matches!(err, StatsError::TooManySkips { .. }));
    }
}
