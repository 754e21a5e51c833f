//! Rough timing of one training step and one eval batch at the default
//! configuration. Useful when sizing runs for a new machine.

use std::time::Instant;

use dioptra_core::autodiff::Tensor;
use dioptra_core::model::{AttentionResNet, ModelConfig, Target};
use dioptra_core::train::l1_loss;

fn main() {
    let config = ModelConfig::new(Target::SphericalEquivalent, 0);
    let mut model = AttentionResNet::new(config.clone()).unwrap();
    let n = 32;
    let r = config.input_resolution;
    let data: Vec<f64> = (0..n * 3 * r * r).map(|i| (i as f64 * 0.37).sin()).collect();
    let batch = Tensor::new(vec![n, 3, r, r], data).unwrap();
    let targets = Tensor::from_vec((0..n).map(|i| i as f64 * 0.1 - 1.0).collect()).unwrap();

    // Warm-up plus measurement of full train steps (forward+backward).
    let steps = 10;
    let start = Instant::now();
    for _ in 0..steps {
        let mut pass = model.forward_train(&batch).unwrap();
        let t = pass.graph.leaf(targets.clone());
        let loss = l1_loss(&mut pass.graph, pass.predictions, t).unwrap();
        pass.graph.backward(loss).unwrap();
    }
    let per_step = start.elapsed() / steps;
    println!("train step ({n} images @ {r}x{r}): {per_step:?}");

    let start = Instant::now();
    for _ in 0..steps {
        model.predict(&batch).unwrap();
    }
    let per_eval = start.elapsed() / steps;
    println!("eval batch ({n} images): {per_eval:?}");

    let steps_per_epoch = 4000usize.div_ceil(n);
    println!(
        "approx epoch at 4000 train + 500 tune images: {:?}",
        per_step * steps_per_epoch as u32 + per_eval * (500 / n) as u32
    );
}
