use super::StatsError;

/// Lanczos g=7, n=9 approximation of ln(Gamma(x)) for x > 0.
/// Accurate to ~15 significant digits over the range used here.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507343278686905,
        -0.13857109526572012,
        9.984_369_578_019_572e-6,
        1.5056327351493116e-7,
    ];
    debug_assert!(x > 0.0);
    let z = x - 1.0;
    let mut acc = 0.999_999_999_999_809_9;
    for (i, c) in COEFFS.iter().enumerate() {
        acc += c / (z + (i + 1) as f64);
    }
    let t = z + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Exact upper tail P(X >= k) for X ~ Binomial(n, null_p), evaluated with
/// log-space terms so it stays finite for n up to about 10^6.
pub fn binomial_test_one_tailed(k: u64, n: u64, null_p: f64) -> Result<f64, StatsError> {
    if k > n {
        return Err(StatsError::InvalidBounds { k, n });
    }
    if !(null_p > 0.0 && null_p < 1.0) {
        return Err(StatsError::InvalidProbability { p: null_p });
    }
    if k == 0 {
        return Ok(1.0);
    }
    let ln_p = null_p.ln();
    let ln_q = (-null_p).ln_1p();
    let ln_terms: Vec<f64> = (k..=n)
        .map(|i| ln_choose(n, i) + i as f64 * ln_p + (n - i) as f64 * ln_q)
        .collect();
    let max = ln_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    // Kahan summation of the rescaled terms.
    let mut sum = 0.0;
    let mut carry = 0.0;
    for &t in &ln_terms {
        let value = (t - max).exp() - carry;
        let next = sum + value;
        carry = (next - sum) - value;
        sum = next;
    }
    Ok((max + sum.ln()).exp().clamp(0.0, 1.0))
}
