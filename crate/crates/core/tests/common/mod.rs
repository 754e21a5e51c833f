//! Shared helpers for the integration suites: a central finite-difference
//! oracle, random tensor builders, and brute-force statistical references.
//! Everything here is independent of the library's internal computation
//! paths; that independence is the point.
#![allow(dead_code)]

pub mod gradsweep;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;

/// Relative error as used by every gradient check:
/// |analytic - numeric| / max(1, |numeric|).
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

/// Central finite differences of a scalar function at `x`, one partial per
/// coordinate.
pub fn central_differences(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut point = x.to_vec();
    let mut grads = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = point[i];
        point[i] = orig + FD_STEP;
        let plus = f(&point);
        point[i] = orig - FD_STEP;
        let minus = f(&point);
        point[i] = orig;
        grads.push((plus - minus) / (2.0 * FD_STEP));
    }
    grads
}

/// Check every analytic partial against central finite differences at
/// h = 1e-5.
///
/// Central differences are invalid where the function is not smooth: ReLU
/// and |x| kinks inside the +/-h window bias the estimate. A partial that
/// fails at h is re-measured at h/16, which shrinks the kink window 16x; if
/// it still fails there, a one-sided probe decides between a kink sitting
/// essentially on the evaluation point (skipped, capped at 10% of partials)
/// and a genuinely wrong gradient (failure).
pub fn assert_partials_match(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    what: &str,
) {
    assert_eq!(analytic.len(), x.len(), "{what}: gradient length");
    let mut point = x.to_vec();
    let mut skipped = 0usize;
    for i in 0..x.len() {
        let a = analytic[i];
        let orig = point[i];
        let mut eval_at = |v: f64, point: &mut Vec<f64>| {
            point[i] = v;
            let y = f(point);
            point[i] = orig;
            y
        };

        let central_h = {
            let plus = eval_at(orig + FD_STEP, &mut point);
            let minus = eval_at(orig - FD_STEP, &mut point);
            (plus - minus) / (2.0 * FD_STEP)
        };
        if rel_err(a, central_h) < FD_REL_TOL {
            continue;
        }

        let fine = FD_STEP / 16.0;
        let plus = eval_at(orig + fine, &mut point);
        let minus = eval_at(orig - fine, &mut point);
        let central_fine = (plus - minus) / (2.0 * fine);
        if rel_err(a, central_fine) < FD_REL_TOL {
            continue;
        }

        let center = f(&point);
        let forward = (plus - center) / fine;
        let backward = (center - minus) / fine;
        let kink = (forward - backward).abs() > 0.01 * forward.abs().max(backward.abs()).max(1.0);
        assert!(
            kink,
            "{what}: partial {i}: analytic {a}, numeric {central_h} (h) / {central_fine} (h/16), rel err {}",
            rel_err(a, central_fine)
        );
        skipped += 1;
    }
    assert!(
        skipped * 10 <= x.len().max(10),
        "{what}: {skipped} of {} partials sat on kinks; check the setup",
        x.len()
    );
}

pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Uniform values in [-1, 1], shifted away from zero so ReLU/|x| kinks do
/// not sit inside the finite-difference step.
pub fn random_values(rng: &mut ChaCha12Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(-1.0..1.0);
            if v.abs() < 1e-3 {
                v + 0.01
            } else {
                v
            }
        })
        .collect()
}

/// Dense-grid brute force for the sliding-window baseline: scan centers at
/// 1e-3 D spacing over the padded label range, counting the half-open
/// window [c - m, c + m).
pub fn sliding_window_dense_grid(values: &[f64], margin: f64) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min) - margin;
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + margin;
    let steps = ((hi - lo) / 1e-3).ceil() as usize;
    let mut best = 0usize;
    for i in 0..=steps {
        let c = lo + i as f64 * 1e-3;
        let count = values
            .iter()
            .filter(|&&y| c - margin <= y && y < c + margin)
            .count();
        best = best.max(count);
    }
    best as f64 / values.len() as f64
}

/// Exact binomial upper tail for small n: Pascal-triangle coefficients
/// (exact in f64 for n <= 30) and powi powers.
pub fn binomial_tail_exact(k: u64, n: u64, p: f64) -> f64 {
    let n = n as usize;
    let mut row = vec![1.0f64];
    for _ in 0..n {
        let mut next = vec![1.0; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    let q = 1.0 - p;
    (k as usize..=n)
        .map(|i| row[i] * p.powi(i as i32) * q.powi((n - i) as i32))
        .sum()
}

/// Sort-based percentile reference: linear interpolation between closest
/// order statistics, written independently of the library.
pub fn percentile_reference(values: &[f64], pct: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = pct / 100.0 * (sorted.len() as f64 - 1.0);
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    } else {
        sorted[lo]
    }
}
