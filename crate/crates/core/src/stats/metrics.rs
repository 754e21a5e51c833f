use super::StatsError;

fn check_pairs(pairs: &[(f64, f64)]) -> Result<(), StatsError> {
    if pairs.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if pairs.iter().any(|(p, a)| !p.is_finite() || !a.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

fn check_values(values: &[f64]) -> Result<(), StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

/// Mean absolute error over (predicted, actual) pairs.
pub fn mae(pairs: &[(f64, f64)]) -> Result<f64, StatsError> {
    check_pairs(pairs)?;
    Ok(pairs.iter().map(|(p, a)| (p - a).abs()).sum::<f64>() / pairs.len() as f64)
}

/// Coefficient of determination, 1 - SS_res / SS_tot. May be negative for
/// models worse than the constant mean.
pub fn r_squared(pairs: &[(f64, f64)]) -> Result<f64, StatsError> {
    check_pairs(pairs)?;
    if pairs.len() < 2 {
        return Err(StatsError::NotEnoughData { needed: 2 });
    }
    let n = pairs.len() as f64;
    let mean = pairs.iter().map(|(_, a)| a).sum::<f64>() / n;
    let ss_tot: f64 = pairs.iter().map(|(_, a)| (a - mean) * (a - mean)).sum();
    if ss_tot == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let ss_res: f64 = pairs.iter().map(|(p, a)| (p - a) * (p - a)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// MAE of the constant predictor that always guesses the sample mean.
pub fn baseline_mae(actuals: &[f64]) -> Result<f64, StatsError> {
    check_values(actuals)?;
    let mean = actuals.iter().sum::<f64>() / actuals.len() as f64;
    Ok(actuals.iter().map(|y| (y - mean).abs()).sum::<f64>() / actuals.len() as f64)
}

fn check_margin(margin_d: f64) -> Result<(), StatsError> {
    // Also rejects NaN.
    if margin_d > 0.0 {
        Ok(())
    } else {
        Err(StatsError::InvalidMargin { margin: margin_d })
    }
}

/// Fraction of pairs with |predicted - actual| <= margin (inclusive).
pub fn margin_accuracy(pairs: &[(f64, f64)], margin_d: f64) -> Result<f64, StatsError> {
    check_pairs(pairs)?;
    check_margin(margin_d)?;
    let hits = pairs.iter().filter(|(p, a)| (p - a).abs() <= margin_d).count();
    Ok(hits as f64 / pairs.len() as f64)
}

/// Count of values inside the half-open window [c - m, c + m).
fn window_count(values: &[f64], center: f64, margin: f64) -> usize {
    values
        .iter()
        .filter(|&&y| center - margin <= y && y < center + margin)
        .count()
}

/// Best within-margin accuracy any constant guess can achieve: the maximum
/// probability mass captured by a width-2m window slid over the sample.
///
/// The window is the vanishing-bin-width limit of summing half-open
/// histogram bins, so it is closed on the left and open on the right. The
/// continuous maximum is attained when the window's left edge sits on a
/// sample, so scanning centers {y_i + m} (plus {y_i} for safety) is exact.
pub fn sliding_window_baseline(actuals: &[f64], margin_d: f64) -> Result<f64, StatsError> {
    check_values(actuals)?;
    check_margin(margin_d)?;
    let mut best = 0usize;
    for &y in actuals {
        for center in [y + margin_d, y] {
            best = best.max(window_count(actuals, center, margin_d));
        }
    }
    Ok(best as f64 / actuals.len() as f64)
}
