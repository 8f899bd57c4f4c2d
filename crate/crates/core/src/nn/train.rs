//! Mini-batch training with Adam, gradient clipping and patience-based early
//! stopping on validation accuracy, plus a finite-difference gradient check.

use log::debug;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::cross_entropy;
use super::optim::{adam_step, clip_global_norm, AdamConfig, AdamState};
use super::tensor::{ParamId, ParamSet, Real};
use crate::error::{Error, Result};
use crate::types::argmax;

/// Something with a class target.
pub trait Labeled {
    fn target(&self) -> usize;
}

impl<S> Labeled for (S, usize) {
    fn target(&self) -> usize {
        self.1
    }
}

/// A trainable classifier with hand-written backpropagation.
pub trait Network<T: Real> {
    type Sample: Labeled;

    fn params(&self) -> &ParamSet<T>;
    fn params_mut(&mut self) -> &mut ParamSet<T>;

    /// Class probabilities in inference mode (no dropout).
    fn predict(&self, x: &Self::Sample) -> Vec<f64>;

    /// Accumulates the cross-entropy gradient for one sample into `grads`
    /// and returns the loss. `rng` enables dropout.
    fn backprop(
        &self,
        x: &Self::Sample,
        grads: &mut ParamSet<T>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> f64;

    /// Hook run after every optimizer step (e.g. re-zeroing the PAD row).
    fn after_update(&mut self) {}

    fn loss(&self, x: &Self::Sample) -> f64 {
        cross_entropy(&self.predict(x), x.target())
    }

    fn accuracy(&self, data: &[Self::Sample]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = data
            .iter()
            .filter(|x| argmax(&self.predict(x)) == x.target())
            .count();
        hits as f64 / data.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// Seeds shuffling and dropout.
    pub seed: u64,
    pub clip_norm: f64,
    #[serde(flatten)]
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 30,
            patience: 5,
            batch_size: 32,
            seed: 0,
            clip_norm: 5.0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Budget used for the layout model: 600 epochs, patience 200.
    pub fn layout_default() -> Self {
        TrainConfig {
            max_epochs: 600,
            patience: 200,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config("patience exceeds max_epochs".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Tracks the best metric and how long it has been since it improved.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    wait: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            wait: 0,
        }
    }

    /// Records the metric of a 1-based `epoch`. Only a strict improvement resets the wait.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> StopDecision {
        if metric > self.best {
            self.best = metric;
            self.best_epoch = epoch;
            self.wait = 0;
            StopDecision {
                improved: true,
                stop: false,
            }
        } else {
            self.wait += 1;
            StopDecision {
                improved: false,
                stop: self.wait >= self.patience,
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub train_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Trains `model` in place and restores the parameters of the epoch with the
/// best validation accuracy. An empty validation set falls back to training accuracy.
pub fn train<T: Real, N: Network<T>>(
    model: &mut N,
    train_data: &[N::Sample],
    val_data: &[N::Sample],
    cfg: &TrainConfig,
) -> Result<History> {
    if train_data.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(model.params());
    let mut grads = model.params().zeros_like();
    let mut best = model.params().clone();
    let mut stopper = EarlyStopping::new(cfg.patience.max(1));
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let monitor = if val_data.is_empty() {
        train_data
    } else {
        val_data
    };

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.zero();
            for &i in batch {
                epoch_loss += model.backprop(&train_data[i], &mut grads, Some(&mut rng));
            }
            grads.scale(T::of(1.0 / batch.len() as f64));
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam_step(model.params_mut(), &grads, &mut state, &cfg.adam)?;
            model.after_update();
        }
        let acc = model.accuracy(monitor);
        history.train_loss.push(epoch_loss / train_data.len() as f64);
        history.val_accuracy.push(acc);
        history.epochs_run = epoch;
        let decision = stopper.observe(epoch, acc);
        debug!(
            "epoch {epoch}: loss {:.4} val_acc {acc:.4}",
            epoch_loss / train_data.len() as f64
        );
        if decision.improved {
            best.assign(model.params());
        }
        if decision.stop {
            break;
        }
    }
    model.params_mut().assign(&best);
    history.best_epoch = stopper.best_epoch();
    Ok(history)
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_relative: f64,
    pub max_absolute: f64,
    /// Parameter tensor, analytic and numeric value at the worst relative error.
    pub worst: Option<(String, f64, f64)>,
}

/// Compares analytic gradients with central finite differences on a random
/// subset of `n_checks` trainable scalars; returns the largest
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<N: Network<f64>>(
    model: &mut N,
    sample: &N::Sample,
    epsilon: f64,
    n_checks: usize,
    seed: u64,
) -> f64 {
    grad_check_report(model, sample, epsilon, n_checks, seed).max_relative
}

pub fn grad_check_report<N: Network<f64>>(
    model: &mut N,
    sample: &N::Sample,
    epsilon: f64,
    n_checks: usize,
    seed: u64,
) -> GradCheckReport {
    let mut grads = model.params().zeros_like();
    model.backprop(sample, &mut grads, None);
    let candidates: Vec<(usize, usize)> = (0..model.params().len())
        .filter(|&k| model.params().is_trainable(ParamId(k)))
        .flat_map(|k| (0..model.params().tensors()[k].len()).map(move |i| (k, i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    for _ in 0..n_checks.min(candidates.len()) {
        let (k, i) = candidates[rng.gen_range(0..candidates.len())];
        let orig = model.params().tensors()[k].data[i];
        model.params_mut().tensors_mut()[k].data[i] = orig + epsilon;
        let up = model.loss(sample);
        model.params_mut().tensors_mut()[k].data[i] = orig - epsilon;
        let down = model.loss(sample);
        model.params_mut().tensors_mut()[k].data[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let analytic = grads.tensors()[k].data[i];
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(1e-8);
        report.checked += 1;
        report.max_absolute = report.max_absolute.max(abs);
        if rel > report.max_relative || report.worst.is_none() {
            report.max_relative = report.max_relative.max(rel);
            report.worst = Some((model.params().names()[k].clone(), analytic, numeric));
        }
    }
    report
}
