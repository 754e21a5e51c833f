//! Train one member on a mid-sized synthetic set and print the per-epoch
//! tune MAE, to sanity-check hyperparameters before longer runs.

use std::time::Instant;

use dioptra_core::data::{generate_synthetic_dataset, prepare_split, GeneratorConfig, Split};
use dioptra_core::model::{ModelConfig, Target};
use dioptra_core::train::{samples_for_target, train_one, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_train: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1200);
    let max_epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(6);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.01);

    let dir = tempfile::tempdir().unwrap();
    let gen = GeneratorConfig {
        n_train,
        n_tune: Some(200),
        n_val: 200,
        resolution: 64,
        seed: 1,
        corrupt_fraction: 0.0,
    };
    let start = Instant::now();
    let out = generate_synthetic_dataset(&gen, dir.path()).unwrap();
    println!("generated {} images in {:?}", out.records.len(), start.elapsed());

    let start = Instant::now();
    let train =
        prepare_split(&out.manifest_path, &out.records, Split::Train, 64).unwrap();
    let tune = prepare_split(&out.manifest_path, &out.records, Split::Tune, 64).unwrap();
    println!("prepared in {:?}", start.elapsed());

    let train_samples = samples_for_target(&train.prepared, Target::SphericalEquivalent);
    let tune_samples = samples_for_target(&tune.prepared, Target::SphericalEquivalent);

    let model_config = ModelConfig::new(Target::SphericalEquivalent, 1);
    let train_config = TrainConfig {
        learning_rate: lr,
        max_epochs,
        patience: 3,
        ..Default::default()
    };
    let start = Instant::now();
    let (_, log) = train_one(&model_config, &train_samples, &tune_samples, &train_config).unwrap();
    for e in &log.epochs {
        println!(
            "epoch {}: train_loss {:.4}, tune_mae {:.4}{}",
            e.epoch,
            e.train_loss,
            e.tune_mae,
            if e.is_best { " *" } else { "" }
        );
    }
    println!(
        "stopped: {} (best epoch {}), took {:?}",
        log.stopped,
        log.best_epoch,
        start.elapsed()
    );
}
