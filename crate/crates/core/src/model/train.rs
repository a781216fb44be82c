//! Training loop with per-epoch learning-rate decay and early stopping, plus
//! evaluation metrics.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cnn::{Cnn, CnnConfig, Example};
use super::loss::{argmax, cross_entropy_row};
use super::optim::{adam_step, lr_schedule, AdamConfig, AdamState};
use super::tensor::Params;
use super::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: u32,
    pub lr0: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub early_stop_patience: u32,
    /// Improvement in validation loss needed to reset patience.
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 400,
            lr0: 1e-3,
            lr_decay: 0.99,
            batch_size: 32,
            adam: AdamConfig::default(),
            early_stop_patience: 20,
            min_delta: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(ModelError::InvalidConfig(format!("lr_decay {}", self.lr_decay)));
        }
        if self.early_stop_patience < 1 || self.batch_size < 1 || self.max_epochs < 1 {
            return Err(ModelError::InvalidConfig(
                "patience, batch size and max_epochs must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch_index: u32) -> f64 {
        lr_schedule(self.lr0, self.lr_decay, epoch_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Wait,
    Stop,
}

/// Tracks the best monitored loss and how long it has not improved.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: u32,
    min_delta: f64,
    best: f64,
    best_epoch: u32,
    waited: u32,
}

impl EarlyStopping {
    pub fn new(patience: u32, min_delta: f64) -> Self {
        EarlyStopping {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            waited: 0,
        }
    }

    pub fn observe(&mut self, epoch: u32, loss: f64) -> StopDecision {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.best_epoch = epoch;
            self.waited = 0;
            StopDecision::Improved
        } else {
            self.waited += 1;
            if self.waited >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Wait
            }
        }
    }

    pub fn best_epoch(&self) -> u32 {
        self.best_epoch
    }
}

/// One line of the epoch log. `epoch` counts from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Cnn,
    pub best_epoch: u32,
    pub stopped_early: bool,
    pub log: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn epochs_run(&self) -> u32 {
        self.log.len() as u32
    }

    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|r| serde_json::to_string(r).expect("epoch record serializes") + "\n")
            .collect()
    }
}

/// Mean loss and accuracy over a set of examples.
pub fn loss_and_accuracy(model: &Cnn, examples: &[Example]) -> Result<(f64, f64), ModelError> {
    if examples.is_empty() {
        return Err(ModelError::EmptyEvaluationSet);
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for ex in examples {
        let p = model.predict(&ex.input)?;
        loss += cross_entropy_row(&p, ex.class);
        if argmax(&p) == ex.class {
            correct += 1;
        }
    }
    let n = examples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains from the configuration's seeded initialization. Each epoch visits
/// the training set in a fresh seeded order at `lr0 * decay^epoch_index`;
/// training stops once validation loss has not improved for `patience`
/// epochs and the best-validation parameters are returned.
pub fn train(
    config: &CnnConfig,
    train_set: &[Example],
    val_set: &[Example],
    tcfg: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    train_from(Cnn::new(config.clone())?, train_set, val_set, tcfg)
}

pub fn train_from(
    mut model: Cnn,
    train_set: &[Example],
    val_set: &[Example],
    tcfg: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    tcfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(ModelError::EmptyEvaluationSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut adam = AdamState::new(&model.params, tcfg.adam);
    let mut stopper = EarlyStopping::new(tcfg.early_stop_patience, tcfg.min_delta);
    let mut best: Params = model.params.clone();
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopped_early = false;

    for t in 0..tcfg.max_epochs {
        let epoch = t + 1;
        let lr = tcfg.lr_at(t);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(tcfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grads) = model.loss_and_grad(&batch)?;
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch });
            }
            epoch_loss += loss * batch.len() as f64;
            adam_step(&mut model.params, &grads, &mut adam, lr);
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let (val_loss, val_acc) = loss_and_accuracy(&model, val_set)?;
        if !val_loss.is_finite() || !train_loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch });
        }
        log::info!("epoch {epoch}: lr {lr:.3e} train {train_loss:.4} val {val_loss:.4} acc {val_acc:.3}");
        log.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_acc,
        });
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best = model.params.clone(),
            StopDecision::Wait => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    model.params = best;
    Ok(TrainOutcome {
        model,
        best_epoch: stopper.best_epoch(),
        stopped_early,
        log,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Binary,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: Task,
    pub loss: f64,
    pub accuracy: f64,
    /// Mean wall-clock forward time per evaluation batch.
    pub time_per_batch_ms: f64,
    pub n_examples: usize,
}

/// Evaluates in batches of `batch_size`. Examples for the binary task must
/// already be restricted to windows that carry a binary label.
pub fn evaluate(model: &Cnn, test_set: &[Example], batch_size: usize, task: Task) -> Result<TaskMetrics, ModelError> {
    if test_set.is_empty() {
        return Err(ModelError::EmptyEvaluationSet);
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut elapsed = 0.0;
    let mut batches = 0usize;
    for chunk in test_set.chunks(batch_size.max(1)) {
        let inputs: Vec<&[f64]> = chunk.iter().map(|e| e.input.as_slice()).collect();
        let start = Instant::now();
        let probs = model.forward(&inputs)?;
        elapsed += start.elapsed().as_secs_f64() * 1e3;
        batches += 1;
        for (p, ex) in probs.iter().zip(chunk) {
            loss += cross_entropy_row(p, ex.class);
            if argmax(p) == ex.class {
                correct += 1;
            }
        }
    }
    let n = test_set.len() as f64;
    Ok(TaskMetrics {
        task,
        loss: loss / n,
        accuracy: correct as f64 / n,
        time_per_batch_ms: elapsed / batches as f64,
        n_examples: test_set.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_patience_arithmetic() {
        let mut s = EarlyStopping::new(20, 0.0);
        let mut stopped_at = None;
        for epoch in 1..=100 {
            if s.observe(epoch, epoch as f64) == StopDecision::Stop {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(21));
        assert_eq!(s.best_epoch(), 1);
    }

    #[test]
    fn improvement_resets_patience() {
        let mut s = EarlyStopping::new(2, 0.0);
        assert_eq!(s.observe(1, 1.0), StopDecision::Improved);
        assert_eq!(s.observe(2, 1.0), StopDecision::Wait);
        assert_eq!(s.observe(3, 0.5), StopDecision::Improved);
        assert_eq!(s.observe(4, 0.6), StopDecision::Wait);
        assert_eq!(s.observe(5, 0.7), StopDecision::Stop);
        assert_eq!(s.best_epoch(), 3);
    }

    #[test]
    fn config_defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.max_epochs, c.batch_size, c.early_stop_patience), (400, 32, 20));
        assert_eq!(c.lr_at(0), 1e-3);
        assert!(TrainConfig {
            lr_decay: 1.5,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            early_stop_patience: 0,
            ..c
        }
        .validate()
        .is_err());
    }
}
