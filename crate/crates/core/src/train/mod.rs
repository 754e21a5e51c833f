//! Training protocol: L1 objective, SGD with momentum over shuffled
//! minibatches, tune-set early stopping with best-checkpoint retention, and
//! ensemble orchestration. Given (seed, data, config) the resulting
//! checkpoint bytes are fully determined.

use std::collections::HashSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::autodiff::{Graph, NodeId, Tensor, TensorError};
use crate::data::{pixel_to_unit, ImageRecord, PreparedRecord, RgbImage};
use crate::model::{AttentionResNet, ModelConfig, ModelError, Target};
use crate::seeds::{subseed, tag};
use thiserror::Error;

/// Optimizer and stopping configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a tune-MAE improvement larger than `min_delta` before
    /// training stops.
    pub patience: usize,
    pub min_delta: f64,
    pub ensemble_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            max_epochs: 100,
            patience: 5,
            min_delta: 0.001,
            ensemble_size: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        // The comparisons are written to also reject NaN.
        let positive = |v: f64| v > 0.0;
        if !positive(self.learning_rate) {
            return Err(TrainError::BadConfig("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::BadConfig("momentum must be in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(TrainError::BadConfig("max_epochs must be positive".into()));
        }
        if self.patience == 0 {
            return Err(TrainError::BadConfig("patience must be at least 1".into()));
        }
        if self.ensemble_size == 0 {
            return Err(TrainError::BadConfig("ensemble_size must be at least 1".into()));
        }
        if !positive(self.min_delta) && self.min_delta != 0.0 {
            return Err(TrainError::BadConfig("min_delta must be non-negative".into()));
        }
        Ok(())
    }
}

/// One preprocessed training example: quantized pixels plus the diopter
/// value of the trained target.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub pixels: RgbImage,
    pub target_d: f64,
    /// Identity of the source record, used for split-disjointness checks.
    pub path: String,
}

/// The labeled diopter value a model with this target trains against, when
/// the record carries it.
pub fn target_value(record: &ImageRecord, target: Target) -> Option<f64> {
    match target {
        Target::SphericalEquivalent => Some(record.label.se_d),
        Target::Sphere => record.label.sphere_d,
        Target::Cylinder => record.label.cylinder_d,
    }
}

/// Turn prepared records into training samples for one target, skipping
/// records that lack the component.
pub fn samples_for_target(prepared: &[PreparedRecord], target: Target) -> Vec<TrainSample> {
    prepared
        .iter()
        .filter_map(|p| {
            target_value(&p.record, target).map(|target_d| TrainSample {
                pixels: p.raster.clone(),
                target_d,
                path: p.record.image_path.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Early,
    MaxEpochs,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::Early => "early",
            StopReason::MaxEpochs => "max_epochs",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub tune_mae: f64,
    pub is_best: bool,
}

/// Per-epoch history of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped: StopReason,
}

impl TrainLog {
    /// CSV with header `epoch,train_loss,tune_mae,is_best`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,tune_mae,is_best")?;
        for r in &self.epochs {
            writeln!(w, "{},{},{},{}", r.epoch, r.train_loss, r.tune_mae, r.is_best)?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{split} split is empty")]
    EmptySplit { split: &'static str },
    #[error("record {path} appears in both the train and tune splits")]
    TuneOverlap { path: String },
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
    #[error("training aborted at epoch {epoch}, step {step}: {source}")]
    Aborted {
        epoch: usize,
        step: usize,
        source: TensorError,
    },
    #[error("sample {path} is {got}px, model expects {expected}px")]
    SampleResolution {
        path: String,
        got: usize,
        expected: usize,
    },
}

/// Mean absolute difference: mean(|predictions - targets|). The subgradient
/// at exact ties is 0.
pub fn l1_loss(
    g: &mut Graph,
    predictions: NodeId,
    targets: NodeId,
) -> Result<NodeId, TensorError> {
    let diff = g.sub(predictions, targets)?;
    let absdiff = g.abs(diff)?;
    g.mean_all(absdiff)
}

/// One SGD-with-momentum update: v <- momentum*v + g; p <- p - lr*v.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    learning_rate: f64,
    momentum: f64,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(TrainError::BadConfig(format!(
            "sgd_step length mismatch: params {}, grads {}, velocity {}",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= learning_rate * *v;
    }
    Ok(())
}

/// Early-stopping policy: the best checkpoint tracks the strict minimum of
/// the tune MAE, while the patience counter only resets on improvements
/// larger than `min_delta`.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    best_epoch: usize,
    streak: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub new_best: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            streak: 0,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_value(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, epoch: usize, tune_mae: f64) -> Observation {
        let significant = self.best - tune_mae > self.min_delta;
        let new_best = tune_mae < self.best;
        if new_best {
            self.best = tune_mae;
            self.best_epoch = epoch;
        }
        if significant {
            self.streak = 0;
        } else {
            self.streak += 1;
        }
        Observation {
            new_best,
            stop: self.streak >= self.patience,
        }
    }
}

/// Assemble a channel-major [-1, 1] batch tensor from sample indices.
fn batch_tensor(samples: &[TrainSample], indices: &[usize], resolution: usize) -> Tensor {
    let n = indices.len();
    let mut data = vec![0.0; n * 3 * resolution * resolution];
    for (bi, &si) in indices.iter().enumerate() {
        let img = &samples[si].pixels;
        for c in 0..3 {
            for y in 0..resolution {
                for x in 0..resolution {
                    data[((bi * 3 + c) * resolution + y) * resolution + x] =
                        pixel_to_unit(img.get(x, y)[c]);
                }
            }
        }
    }
    Tensor::new(vec![n, 3, resolution, resolution], data).expect("finite pixels")
}

fn check_samples(
    samples: &[TrainSample],
    resolution: usize,
) -> Result<(), TrainError> {
    for s in samples {
        if s.pixels.width != resolution || s.pixels.height != resolution {
            return Err(TrainError::SampleResolution {
                path: s.path.clone(),
                got: s.pixels.width,
                expected: resolution,
            });
        }
    }
    Ok(())
}

/// Eval-mode MAE of a model over samples, in fixed-size batches.
pub fn eval_mae(model: &AttentionResNet, samples: &[TrainSample]) -> Result<f64, TrainError> {
    let resolution = model.config().input_resolution;
    let mut total = 0.0;
    let indices: Vec<usize> = (0..samples.len()).collect();
    for chunk in indices.chunks(64) {
        let batch = batch_tensor(samples, chunk, resolution);
        let (preds, _) = model.predict(&batch)?;
        for (bi, &si) in chunk.iter().enumerate() {
            total += (preds[bi] - samples[si].target_d).abs();
        }
    }
    Ok(total / samples.len() as f64)
}

/// Train one model: shuffle per epoch, minimize L1 by SGD, score the tune
/// split after every epoch, and return the parameters of the best epoch.
pub fn train_one(
    model_config: &ModelConfig,
    train: &[TrainSample],
    tune: &[TrainSample],
    config: &TrainConfig,
) -> Result<(AttentionResNet, TrainLog), TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit { split: "train" });
    }
    if tune.is_empty() {
        return Err(TrainError::EmptySplit { split: "tune" });
    }
    let tune_paths: HashSet<&str> = tune.iter().map(|s| s.path.as_str()).collect();
    if let Some(shared) = train.iter().find(|s| tune_paths.contains(s.path.as_str())) {
        return Err(TrainError::TuneOverlap {
            path: shared.path.clone(),
        });
    }
    let resolution = model_config.input_resolution;
    check_samples(train, resolution)?;
    check_samples(tune, resolution)?;

    let mut model = AttentionResNet::new(model_config.clone())?;
    let mut velocity: Vec<Vec<f64>> = model
        .params()
        .iter()
        .map(|p| vec![0.0; p.numel()])
        .collect();

    let mut stopping = EarlyStopping::new(config.patience, config.min_delta);
    let mut best_state: Option<AttentionResNet> = None;
    let mut log = TrainLog {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped: StopReason::MaxEpochs,
    };

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.max_epochs {
        let mut rng =
            ChaCha12Rng::seed_from_u64(subseed(config.seed, tag::EPOCH_SHUFFLE, epoch as u64));
        order.shuffle(&mut rng);

        let mut abs_err_sum = 0.0;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let aborted = |source: TensorError| TrainError::Aborted { epoch, step, source };
            let batch = batch_tensor(train, chunk, resolution);
            let targets = Tensor::from_vec(chunk.iter().map(|&i| train[i].target_d).collect())
                .expect("finite targets");
            let mut pass = match model.forward_train(&batch) {
                Ok(pass) => pass,
                Err(ModelError::Tensor(source)) => return Err(aborted(source)),
                Err(other) => return Err(other.into()),
            };
            let target_node = pass.graph.leaf(targets);
            let loss =
                l1_loss(&mut pass.graph, pass.predictions, target_node).map_err(aborted)?;
            pass.graph.backward(loss).map_err(aborted)?;
            for (i, node) in pass.param_nodes.iter().enumerate() {
                let grad = pass.graph.grad(*node).expect("parameter gradient");
                sgd_step(
                    model.params_mut()[i].data_mut(),
                    grad,
                    &mut velocity[i],
                    config.learning_rate,
                    config.momentum,
                )?;
            }
            let loss_value = pass.graph.value(loss).item().expect("scalar loss");
            abs_err_sum += loss_value * chunk.len() as f64;
        }

        let train_loss = abs_err_sum / train.len() as f64;
        let tune_mae = eval_mae(&model, tune)?;
        let outcome = stopping.observe(epoch, tune_mae);
        if outcome.new_best {
            best_state = Some(model.clone());
        }
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            tune_mae,
            is_best: outcome.new_best,
        });
        if outcome.stop {
            log.stopped = StopReason::Early;
            break;
        }
    }

    log.best_epoch = stopping.best_epoch();
    let best = best_state.expect("at least one epoch ran");
    Ok((best, log))
}

/// Train `ensemble_size` members on the same data. Member i uses model seed
/// `model_config.seed + i` and shuffle seed `config.seed + i`, so members
/// differ only by initialization and shuffle order.
pub fn train_ensemble(
    model_config: &ModelConfig,
    train: &[TrainSample],
    tune: &[TrainSample],
    config: &TrainConfig,
) -> Result<Vec<(AttentionResNet, TrainLog)>, TrainError> {
    config.validate()?;
    let k = config.ensemble_size;
    let mut slots: Vec<Option<Result<(AttentionResNet, TrainLog), TrainError>>> =
        (0..k).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for i in 0..k {
            let member_model = ModelConfig {
                seed: model_config.seed.wrapping_add(i as u64),
                ..model_config.clone()
            };
            let member_train = TrainConfig {
                seed: config.seed.wrapping_add(i as u64),
                ensemble_size: 1,
                ..config.clone()
            };
            handles.push(scope.spawn(move || train_one(&member_model, train, tune, &member_train)));
        }
        for (slot, handle) in slots.iter_mut().zip(handles) {
            *slot = Some(handle.join().expect("trainer thread panicked"));
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("all slots filled"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_loss_examples() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::from_vec(vec![1.0, -2.0, 0.5]).unwrap());
        let t = g.leaf(Tensor::from_vec(vec![1.0, -2.0, 0.5]).unwrap());
        let loss = l1_loss(&mut g, p, t).unwrap();
        assert_eq!(g.value(loss).item(), Some(0.0));

        let mut g = Graph::new();
        let p = g.leaf(Tensor::from_vec(vec![0.0, 0.0]).unwrap());
        let t = g.leaf(Tensor::from_vec(vec![1.0, -1.0]).unwrap());
        let loss = l1_loss(&mut g, p, t).unwrap();
        assert_eq!(g.value(loss).item(), Some(1.0));
    }

    #[test]
    fn l1_gradient_is_sign_over_n() {
        let mut g = Graph::new();
        let p = g
            .leaf(Tensor::from_vec(vec![2.0, -3.0, 0.5, 0.0]).unwrap().with_grad());
        let t = g.leaf(Tensor::from_vec(vec![1.0, -1.0, 0.5, 1.0]).unwrap());
        let loss = l1_loss(&mut g, p, t).unwrap();
        g.backward(loss).unwrap();
        // diffs: +1, -2, 0 (tie -> 0 subgradient), -1.
        assert_eq!(g.grad(p).unwrap(), &[0.25, -0.25, 0.0, -0.25]);
    }

    #[test]
    fn sgd_step_hand_traces() {
        // Zero gradient, zero velocity: no change.
        let mut p = vec![1.0];
        let mut v = vec![0.0];
        sgd_step(&mut p, &[0.0], &mut v, 0.1, 0.9).unwrap();
        assert_eq!(p, vec![1.0]);

        // Momentum 0: plain step.
        let mut p = vec![0.0];
        let mut v = vec![0.0];
        sgd_step(&mut p, &[1.0], &mut v, 0.1, 0.0).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-15);

        // Two steps, momentum 0.9, constant gradient 1, lr 0.1:
        // p = -0.1 then -0.29.
        let mut p = vec![0.0];
        let mut v = vec![0.0];
        sgd_step(&mut p, &[1.0], &mut v, 0.1, 0.9).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-15);
        sgd_step(&mut p, &[1.0], &mut v, 0.1, 0.9).unwrap();
        assert!((p[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn sgd_step_rejects_length_mismatch() {
        let mut p = vec![0.0; 2];
        let mut v = vec![0.0; 2];
        assert!(sgd_step(&mut p, &[1.0], &mut v, 0.1, 0.9).is_err());
    }

    #[test]
    fn early_stopping_follows_the_spec_trace() {
        let mut es = EarlyStopping::new(2, 0.001);
        let trace = [1.0, 0.9, 0.95, 0.96, 0.97];
        let mut stopped_at = None;
        for (i, &mae) in trace.iter().enumerate() {
            let epoch = i + 1;
            let obs = es.observe(epoch, mae);
            if obs.stop {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(4));
        assert_eq!(es.best_epoch(), 2);
    }

    #[test]
    fn strictly_improving_trace_never_stops() {
        let mut es = EarlyStopping::new(2, 0.001);
        for epoch in 1..=10 {
            let mae = 1.0 - epoch as f64 * 0.05;
            assert!(!es.observe(epoch, mae).stop);
        }
        assert_eq!(es.best_epoch(), 10);
    }

    #[test]
    fn sub_min_delta_improvement_still_updates_best() {
        let mut es = EarlyStopping::new(3, 0.01);
        es.observe(1, 1.0);
        let obs = es.observe(2, 0.995);
        assert!(obs.new_best);
        assert_eq!(es.best_epoch(), 2);
        assert!((es.best_value() - 0.995).abs() < 1e-12);
    }

    #[test]
    fn log_csv_format() {
        let log = TrainLog {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 2.5,
                tune_mae: 3.0,
                is_best: true,
            }],
            best_epoch: 1,
            stopped: StopReason::MaxEpochs,
        };
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,train_loss,tune_mae,is_best\n1,2.5,3,true\n"
        );
    }
}
