//! Property tests for the engine and statistics invariants, plus sanity
//! checks that need independent reference implementations.

mod common;

use dioptra_core::autodiff::{Graph, Tensor};
use dioptra_core::data::RgbImage;
use dioptra_core::stats::{
    baseline_mae, bootstrap_ci, mae, margin_accuracy, percentile_linear, sliding_window_baseline,
};
use proptest::prelude::*;
use rand::Rng;

fn finite_vec(len: std::ops::Range<usize>, bound: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-bound..bound, len)
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant(
        logits in finite_vec(1..24, 30.0),
        shift in -50.0..50.0f64,
    ) {
        let n = logits.len();
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(logits.clone()).unwrap());
        let y = g.softmax(x, 0).unwrap();
        let base = g.value(y).data().to_vec();

        let total: f64 = base.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-6);
        prop_assert!(base.iter().all(|&w| w > 0.0 && w <= 1.0));

        let mut g2 = Graph::new();
        let shifted: Vec<f64> = logits.iter().map(|&v| v + shift).collect();
        let x2 = g2.leaf(Tensor::from_vec(shifted).unwrap());
        let y2 = g2.softmax(x2, 0).unwrap();
        for (a, b) in base.iter().zip(g2.value(y2).data()) {
            prop_assert!((a - b).abs() < 1e-9, "shift changed weights: {a} vs {b}");
        }
        prop_assert_eq!(base.len(), n);
    }

    #[test]
    fn margin_accuracy_is_non_decreasing_in_margin(
        pairs in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 1..40),
        m1 in 0.01..5.0f64,
        dm in 0.0..5.0f64,
    ) {
        let a1 = margin_accuracy(&pairs, m1).unwrap();
        let a2 = margin_accuracy(&pairs, m1 + dm).unwrap();
        prop_assert!(a2 >= a1);
    }

    #[test]
    fn window_baseline_dominates_mean_predictor(
        actuals in finite_vec(1..60, 8.0),
        margin in 0.05..3.0f64,
    ) {
        let mean = actuals.iter().sum::<f64>() / actuals.len() as f64;
        let pairs: Vec<(f64, f64)> = actuals.iter().map(|&a| (mean, a)).collect();
        let mean_acc = margin_accuracy(&pairs, margin).unwrap();
        let window = sliding_window_baseline(&actuals, margin).unwrap();
        // Ties |y - mean| == margin have probability zero for continuous draws.
        prop_assert!(window >= mean_acc - 1e-12, "window {window} < mean acc {mean_acc}");
    }

    #[test]
    fn baseline_mae_equals_mae_of_mean_predictor(actuals in finite_vec(1..50, 10.0)) {
        let mean = actuals.iter().sum::<f64>() / actuals.len() as f64;
        let pairs: Vec<(f64, f64)> = actuals.iter().map(|&a| (mean, a)).collect();
        let direct = baseline_mae(&actuals).unwrap();
        let composed = mae(&pairs).unwrap();
        prop_assert!((direct - composed).abs() < 1e-12);
    }

    #[test]
    fn pnm_roundtrip_is_identity(
        w in 1usize..12,
        h in 1usize..12,
        payload in prop::collection::vec(any::<u8>(), 0..432),
    ) {
        let mut pixels = payload;
        pixels.resize(w * h * 3, 7);
        let img = RgbImage { width: w, height: h, pixels };
        let decoded = RgbImage::from_ppm(&img.to_ppm()).unwrap();
        prop_assert_eq!(decoded, img);
    }

    #[test]
    fn percentile_matches_sort_based_reference(
        values in finite_vec(2..80, 100.0),
        pct in 0.0..100.0f64,
    ) {
        let mut sorted = values.clone();
        sorted.sort_unstable_by(f64::total_cmp);
        let ours = percentile_linear(&sorted, pct);
        let reference = common::percentile_reference(&values, pct);
        prop_assert!((ours - reference).abs() <= 1e-9 * reference.abs().max(1.0));
    }

    #[test]
    fn window_baseline_matches_dense_grid_on_lattice_labels(
        quarter_steps in prop::collection::vec(-32i32..32, 1..40),
        margin_idx in 0usize..3,
    ) {
        let labels: Vec<f64> = quarter_steps.iter().map(|&q| q as f64 * 0.25).collect();
        let margin = [0.5, 1.0, 2.0][margin_idx];
        let fast = sliding_window_baseline(&labels, margin).unwrap();
        let dense = common::sliding_window_dense_grid(&labels, margin);
        prop_assert_eq!(fast, dense);
    }
}

/// 95% bootstrap CIs for the mean should cover the true mean of a known
/// distribution most of the time; the acceptance band is deliberately loose.
#[test]
fn bootstrap_coverage_is_in_the_sanity_band() {
    let mut rng = common::rng(2024);
    let trials = 500;
    let n = 40;
    let true_mean = 0.5; // uniform on [0, 1]
    let mut covered = 0;
    for t in 0..trials {
        let sample: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let metric = |xs: &[f64]| -> Result<f64, dioptra_core::stats::StatsError> {
            Ok(xs.iter().sum::<f64>() / xs.len() as f64)
        };
        let ci = bootstrap_ci(&sample, metric, 2000, 7000 + t).unwrap();
        if ci.lower <= true_mean && true_mean <= ci.upper {
            covered += 1;
        }
    }
    let rate = covered as f64 / trials as f64;
    assert!(
        (0.90..=0.99).contains(&rate),
        "coverage {rate} outside [0.90, 0.99]"
    );
}

/// Aggregation linearity: the grouped mean of a union is the count-weighted
/// mean of the groups.
#[test]
fn atlas_aggregation_is_linear() {
    use dioptra_core::atlas::{aggregate_maps, BandScheme, HeatmapImage};
    use dioptra_core::data::Eye;

    let mut rng = common::rng(5);
    let make = |rng: &mut rand_chacha::ChaCha12Rng| {
        let mut w: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..1.0)).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        HeatmapImage {
            width: 4,
            height: 4,
            weights: w,
            renormalized: true,
            source_path: "x.ppm".into(),
            model_seed: 0,
            eye: Eye::Left,
            se_d: 0.0,
        }
    };
    let s1: Vec<HeatmapImage> = (0..7).map(|_| make(&mut rng)).collect();
    let s2: Vec<HeatmapImage> = (0..5).map(|_| make(&mut rng)).collect();
    let both: Vec<HeatmapImage> = s1.iter().chain(&s2).cloned().collect();

    let scheme = BandScheme::aggregate_default();
    let m1 = &aggregate_maps(&s1, &scheme, 1).unwrap().groups[0].mean.clone();
    let m2 = &aggregate_maps(&s2, &scheme, 1).unwrap().groups[0].mean.clone();
    let m12 = &aggregate_maps(&both, &scheme, 1).unwrap().groups[0].mean.clone();
    for i in 0..16 {
        let weighted = (7.0 * m1[i] + 5.0 * m2[i]) / 12.0;
        assert!((m12[i] - weighted).abs() < 1e-9);
    }
}
