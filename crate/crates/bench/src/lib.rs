//! Shared builders for the benchmark targets.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use dioptra_core::autodiff::Tensor;
use dioptra_core::model::{AttentionResNet, ModelConfig, Target};

pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).expect("finite values")
}

/// Default-architecture model plus a batch at its input resolution.
pub fn default_model_and_batch(batch: usize) -> (AttentionResNet, Tensor) {
    let config = ModelConfig::new(Target::SphericalEquivalent, 0);
    let r = config.input_resolution;
    let model = AttentionResNet::new(config).expect("valid config");
    let input = random_tensor(vec![batch, 3, r, r], 7);
    (model, input)
}

/// Diopter-like labels for the statistics benchmarks.
pub fn random_labels(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(-8.0..6.0)).collect()
}
