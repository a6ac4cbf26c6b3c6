//! Builds the two fixed classifier architectures and trains them until the
//! intended reasoning is verified, restarting from fresh initializations when
//! a run falls short.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{bce_loss_batch, AdamConfig, AdamState, LayerSpec, Network};
use crate::reasoning::{accuracy_report, predict, BucketAccuracy, ReasoningKind, VERIFICATION_THRESHOLD};
use crate::seed::{derive_seed, rng_for};
use crate::textbox::{render_batch, Dataset, CANVAS, CHANNELS};

/// Layer sequence for a reasoning type. Shapes for a 3x64x64 input:
///
/// simple:  3x64x64 -> 32x31x31 -> 64x15x15 -> 64x7x7 -> 3136 -> 200 -> 2
/// complex: 3x64x64 -> 64x31x31 -> 128x15x15 -> 256x7x7 -> 64x3x3 -> 576 -> 200 -> 200 -> 2
pub fn architecture(reasoning: ReasoningKind) -> Vec<LayerSpec> {
    let conv = |out_channels| LayerSpec::Conv2D { out_channels, kernel_size: 3, stride: 2 };
    let dense = |out_units| LayerSpec::Dense { out_units };
    let relu = LayerSpec::ReLU;
    if reasoning.is_simple() {
        vec![
            conv(32), relu, conv(64), relu, conv(64), relu,
            LayerSpec::Flatten, dense(200), relu, dense(2), LayerSpec::SoftmaxOutput,
        ]
    } else {
        vec![
            conv(64), relu, conv(128), relu, conv(256), relu, conv(64), relu,
            LayerSpec::Flatten, dense(200), relu, dense(200), relu, dense(2), LayerSpec::SoftmaxOutput,
        ]
    }
}

pub fn build_model(reasoning: ReasoningKind, seed: u64) -> Network<f32> {
    let mut net = Network::from_specs(&[CHANNELS, CANVAS, CANVAS], &architecture(reasoning), seed)
        .expect("fixed architectures fit a 64x64 input");
    net.meta.reasoning = Some(reasoning.name().to_string());
    net
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub reasoning: ReasoningKind,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub max_restarts: usize,
    pub master_seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl TrainConfig {
    pub fn new(reasoning: ReasoningKind, master_seed: u64) -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            reasoning,
            learning_rate: adam.learning_rate,
            max_epochs: 10,
            batch_size: 32,
            max_restarts: 5,
            master_seed,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, epsilon: self.epsilon }
    }

    /// Initialization seed for attempt `restart` (0 is the first run).
    pub fn init_seed(&self, restart: usize) -> u64 {
        derive_seed(self.master_seed, &["init", &restart.to_string()])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub restart: usize,
    pub epoch: usize,
    pub mean_loss: f64,
    pub running_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub reasoning: ReasoningKind,
    pub passed: bool,
    pub epochs_run: usize,
    pub restarts: usize,
    pub init_seed: u64,
    pub final_train_accuracy: f64,
    pub final_validation_accuracy: f64,
    pub per_bucket_validation: Vec<BucketAccuracy>,
    pub wall_time_secs: f64,
    pub history: Vec<EpochLog>,
}

impl TrainReport {
    fn worst_bucket(&self) -> f64 {
        self.per_bucket_validation.iter().map(|b| b.accuracy).fold(f64::INFINITY, f64::min)
    }
}

/// Trains `net` on `dataset`; on failure retries with fresh initializations up
/// to `cfg.max_restarts` times. Returns the first network that reaches the
/// verification threshold on the full training set and on every validation
/// bucket, or a training-failure error carrying the best attempt's report.
pub fn train(net: Network<f32>, dataset: &Dataset, cfg: &TrainConfig) -> Result<(Network<f32>, TrainReport)> {
    let (model, report) = train_best(net, dataset, cfg)?;
    if report.passed {
        Ok((model, report))
    } else {
        Err(Error::TrainingFailure {
            restarts: report.restarts,
            best_accuracy: report.final_validation_accuracy,
            report: Box::new(report),
        })
    }
}

/// Like [`train`] but hands back the best attempt even when none passed
/// (`report.passed` tells which).
pub fn train_best(net: Network<f32>, dataset: &Dataset, cfg: &TrainConfig) -> Result<(Network<f32>, TrainReport)> {
    cfg.validate()?;
    if dataset.reasoning != cfg.reasoning {
        return Err(Error::config(format!(
            "dataset is {} but config trains {}",
            dataset.reasoning, cfg.reasoning
        )));
    }
    if dataset.train.is_empty() || dataset.validation.is_empty() {
        return Err(Error::config("empty training or validation split"));
    }
    let started = Instant::now();
    let mut history = Vec::new();
    let mut best: Option<(Network<f32>, TrainReport)> = None;
    let mut net = Some(net);
    for restart in 0..=cfg.max_restarts {
        let mut model = match net.take() {
            Some(n) => n,
            None => build_model(cfg.reasoning, cfg.init_seed(restart)),
        };
        let (epochs, passed) = run_attempt(&mut model, dataset, cfg, restart, &mut history)?;
        let val = accuracy_report(&dataset.validation, &predict(&model, &dataset.validation, 64)?);
        let train_acc = accuracy_report(&dataset.train, &predict(&model, &dataset.train, 64)?).overall;
        let report = TrainReport {
            reasoning: cfg.reasoning,
            passed: passed && val.passed && train_acc >= VERIFICATION_THRESHOLD,
            epochs_run: epochs,
            restarts: restart,
            init_seed: model.meta.seed,
            final_train_accuracy: train_acc,
            final_validation_accuracy: val.overall,
            per_bucket_validation: val.per_bucket,
            wall_time_secs: started.elapsed().as_secs_f64(),
            history: history.clone(),
        };
        log::info!(
            "{} attempt {restart}: {} epochs, train {:.4}, validation {:.4}, worst bucket {:.4}",
            cfg.reasoning,
            epochs,
            train_acc,
            report.final_validation_accuracy,
            report.worst_bucket()
        );
        if report.passed {
            return Ok((model, report));
        }
        if best.as_ref().is_none_or(|(_, b)| report.worst_bucket() > b.worst_bucket()) {
            best = Some((model, report));
        }
    }
    let (model, mut report) = best.expect("at least one attempt");
    report.restarts = cfg.max_restarts;
    report.wall_time_secs = started.elapsed().as_secs_f64();
    report.history = history;
    Ok((model, report))
}

/// One training run. Returns (epochs run, early-stop criterion met).
fn run_attempt(
    model: &mut Network<f32>,
    dataset: &Dataset,
    cfg: &TrainConfig,
    restart: usize,
    history: &mut Vec<EpochLog>,
) -> Result<(usize, bool)> {
    let mut adam = AdamState::new(model, cfg.adam());
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let attempt_seed = derive_seed(cfg.master_seed, &["attempt", &restart.to_string()]);
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng_for(attempt_seed, &["shuffle", &epoch.to_string()]));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let scenes = chunk.iter().map(|&i| &dataset.train[i].scene);
            let labels: Vec<usize> = chunk.iter().map(|&i| dataset.train[i].label).collect();
            let x = render_batch(scenes);
            let trace = model.forward_batch(&x)?;
            let (loss, grad) = bce_loss_batch(trace.logits(), &labels)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("loss became {loss} in epoch {epoch}")));
            }
            correct += trace
                .logits()
                .data()
                .chunks(2)
                .zip(&labels)
                .filter(|(l, &y)| ((l[1] > l[0]) as usize) == y)
                .count();
            loss_sum += loss * labels.len() as f64;
            let grads = model.backward(&trace, &grad)?;
            adam.step(model, &grads.params)?;
        }
        let n = dataset.train.len() as f64;
        let running = correct as f64 / n;
        history.push(EpochLog { restart, epoch: epoch + 1, mean_loss: loss_sum / n, running_accuracy: running });
        log::info!(
            "{} attempt {restart} epoch {}: loss {:.5}, running accuracy {:.4}",
            cfg.reasoning,
            epoch + 1,
            loss_sum / n,
            running
        );
        if running >= VERIFICATION_THRESHOLD {
            let val = accuracy_report(&dataset.validation, &predict(model, &dataset.validation, 64)?);
            if val.passed {
                return Ok((epoch + 1, true));
            }
        }
    }
    Ok((cfg.max_epochs, false))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn architectures_match_layer_counts() {
        let simple = build_model(ReasoningKind::SimpleFr, 0);
        let convs = |n: &Network<f32>| n.specs().iter().filter(|s| matches!(s, LayerSpec::Conv2D { .. })).count();
        let denses = |n: &Network<f32>| n.specs().iter().filter(|s| matches!(s, LayerSpec::Dense { .. })).count();
        assert_eq!((convs(&simple), denses(&simple)), (3, 2));
        assert_eq!(simple.output_shape(), vec![2]);
        let shapes = simple.layer_shapes().unwrap();
        assert_eq!(shapes[6], vec![64, 7, 7]);
        let complex = build_model(ReasoningKind::ComplexCr1, 0);
        assert_eq!((convs(&complex), denses(&complex)), (4, 3));
        assert_eq!(complex.layer_shapes().unwrap()[8], vec![64, 3, 3]);
        assert_eq!(complex.output_shape(), vec![2]);
    }

    #[test]
    fn same_seed_same_model() {
        assert_eq!(build_model(ReasoningKind::SimpleNr, 5), build_model(ReasoningKind::SimpleNr, 5));
    }

    #[test]
    fn config_guards() {
        let mut c = TrainConfig::new(ReasoningKind::SimpleFr, 1);
        assert!(c.validate().is_ok());
        c.max_epochs = 0;
        assert!(c.validate().is_err());
        c.max_epochs = 1;
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
    }
}
