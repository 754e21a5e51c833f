//! End-to-end trainer behavior on small synthetic runs: determinism,
//! best-checkpoint retention, and the split-hygiene guards.

mod common;

use dioptra_core::data::{generate_synthetic_dataset, prepare_split, GeneratorConfig, Split};
use dioptra_core::model::{save_checkpoint, ModelConfig, Target};
use dioptra_core::train::{
    samples_for_target, train_ensemble, train_one, TrainConfig, TrainError, TrainSample,
};

struct SmallRun {
    train: Vec<TrainSample>,
    tune: Vec<TrainSample>,
}

fn small_run(seed: u64) -> SmallRun {
    let dir = tempfile::tempdir().unwrap();
    let gen = GeneratorConfig {
        n_train: 24,
        n_tune: Some(8),
        n_val: 0,
        resolution: 40,
        seed,
        corrupt_fraction: 0.0,
    };
    let out = generate_synthetic_dataset(&gen, dir.path()).unwrap();
    let resolution = 32;
    let train = prepare_split(&out.manifest_path, &out.records, Split::Train, resolution).unwrap();
    let tune = prepare_split(&out.manifest_path, &out.records, Split::Tune, resolution).unwrap();
    SmallRun {
        train: samples_for_target(&train.prepared, Target::SphericalEquivalent),
        tune: samples_for_target(&tune.prepared, Target::SphericalEquivalent),
    }
}

fn tiny_model_config(seed: u64) -> ModelConfig {
    ModelConfig {
        input_resolution: 32,
        stem_channels: [4, 8],
        block_channels: [8, 8, 8],
        block_strides: [1, 2, 1],
        fc_widths: [32, 1],
        target: Target::SphericalEquivalent,
        seed,
    }
}

fn quick_train_config() -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        max_epochs: 2,
        patience: 1,
        ensemble_size: 1,
        seed: 3,
        ..Default::default()
    }
}

#[test]
fn same_seed_same_data_gives_byte_identical_checkpoints() {
    let run = small_run(11);
    let model_config = tiny_model_config(5);
    let config = quick_train_config();

    let (m1, log1) = train_one(&model_config, &run.train, &run.tune, &config).unwrap();
    let (m2, log2) = train_one(&model_config, &run.train, &run.tune, &config).unwrap();
    assert_eq!(log1, log2);

    let f1 = tempfile::NamedTempFile::new().unwrap();
    let f2 = tempfile::NamedTempFile::new().unwrap();
    save_checkpoint(&m1, f1.path()).unwrap();
    save_checkpoint(&m2, f2.path()).unwrap();
    assert_eq!(
        std::fs::read(f1.path()).unwrap(),
        std::fs::read(f2.path()).unwrap()
    );
}

#[test]
fn single_member_ensemble_equals_train_one() {
    let run = small_run(12);
    let model_config = tiny_model_config(9);
    let config = quick_train_config();

    let (single, single_log) = train_one(&model_config, &run.train, &run.tune, &config).unwrap();
    let members = train_ensemble(&model_config, &run.train, &run.tune, &config).unwrap();
    assert_eq!(members.len(), 1);
    assert_eq!(members[0].1, single_log);
    for (a, b) in single.params().iter().zip(members[0].0.params()) {
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn ensemble_reruns_identically_and_members_differ() {
    let run = small_run(13);
    let model_config = tiny_model_config(2);
    let config = TrainConfig {
        ensemble_size: 3,
        ..quick_train_config()
    };
    let a = train_ensemble(&model_config, &run.train, &run.tune, &config).unwrap();
    let b = train_ensemble(&model_config, &run.train, &run.tune, &config).unwrap();
    assert_eq!(a.len(), 3);
    for (ma, mb) in a.iter().zip(&b) {
        for (pa, pb) in ma.0.params().iter().zip(mb.0.params()) {
            assert_eq!(pa.data(), pb.data());
        }
    }
    // Different seeds genuinely produce different members.
    assert_ne!(a[0].0.params()[0].data(), a[1].0.params()[0].data());
}

#[test]
fn best_epoch_has_the_minimum_tune_mae() {
    let run = small_run(14);
    let model_config = tiny_model_config(4);
    let config = TrainConfig {
        batch_size: 8,
        max_epochs: 5,
        patience: 5,
        ensemble_size: 1,
        seed: 8,
        ..Default::default()
    };
    let (_, log) = train_one(&model_config, &run.train, &run.tune, &config).unwrap();
    let min = log
        .epochs
        .iter()
        .map(|e| e.tune_mae)
        .fold(f64::INFINITY, f64::min);
    let best = log
        .epochs
        .iter()
        .find(|e| e.epoch == log.best_epoch)
        .unwrap();
    assert_eq!(best.tune_mae, min);
    assert!(log.epochs.iter().all(|e| e.train_loss.is_finite()));
}

#[test]
fn shared_records_between_train_and_tune_are_rejected() {
    let run = small_run(15);
    let mut tune = run.tune.clone();
    tune.push(run.train[0].clone());
    let err = train_one(
        &tiny_model_config(1),
        &run.train,
        &tune,
        &quick_train_config(),
    )
    .unwrap_err();
    assert!(matches!(err, TrainError::TuneOverlap { .. }));
}

#[test]
fn empty_splits_are_rejected() {
    let run = small_run(16);
    let err = train_one(&tiny_model_config(1), &[], &run.tune, &quick_train_config()).unwrap_err();
    assert!(matches!(err, TrainError::EmptySplit { split: "train" }));
    let err =
        train_one(&tiny_model_config(1), &run.train, &[], &quick_train_config()).unwrap_err();
    assert!(matches!(err, TrainError::EmptySplit { split: "tune" }));
}
