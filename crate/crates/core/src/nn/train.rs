use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{argmax, cross_entropy, Batch, GradientSet, Model};
use crate::data::{Dataset, Split};
use crate::error::{bail, Result};
use crate::rng::{purpose, stream};

/// Samples per forward pass when only evaluating.
const EVAL_CHUNK: usize = 1024;

/// Piecewise-constant learning rate: `(start_epoch, rate)` pairs. The first
/// entry must start at epoch 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schedule(pub Vec<(usize, f64)>);

impl Schedule {
    pub fn constant(rate: f64) -> Self {
        Schedule(vec![(0, rate)])
    }

    pub fn validate(&self) -> Result<()> {
        match self.0.first() {
            Some((0, _)) => {}
            _ => bail!(Config, "learning-rate schedule must start at epoch 0"),
        }
        if self.0.windows(2).any(|w| w[0].0 >= w[1].0) {
            bail!(Config, "schedule epochs must be strictly increasing");
        }
        if let Some((_, r)) = self.0.iter().find(|(_, r)| !(*r > 0.0 && r.is_finite())) {
            bail!(Config, "learning rates must be positive, got {r}");
        }
        Ok(())
    }

    pub fn rate_at(&self, epoch: usize) -> f64 {
        self.0
            .iter()
            .take_while(|(start, _)| *start <= epoch)
            .last()
            .map_or(self.0[0].1, |&(_, r)| r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            bail!(Config, "epochs must be at least 1");
        }
        if self.batch_size == 0 {
            bail!(Config, "batch size must be at least 1");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            bail!(Config, "weight decay must be finite and nonnegative");
        }
        self.schedule.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub validation_accuracy: f64,
}

fn check_classes(model: &Model, dataset: &Dataset) -> Result<()> {
    if model.classes() != dataset.classes() {
        bail!(Shape, "model has {} classes, dataset {}", model.classes(), dataset.classes());
    }
    Ok(())
}

/// Mean cross-entropy and accuracy over a split.
pub fn evaluate(model: &Model, dataset: &Dataset, split: Split) -> Result<(f64, f64)> {
    let indices = dataset.split(split);
    if indices.is_empty() {
        bail!(Input, "{split:?} split is empty");
    }
    check_classes(model, dataset)?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (x, y) = dataset.gather(chunk);
        let logits = model.logits(x.view())?;
        loss += cross_entropy(&logits, &y).0 * chunk.len() as f64;
        correct += logits
            .rows()
            .into_iter()
            .zip(&y)
            .filter(|(r, &label)| argmax(r.iter()) == label)
            .count();
    }
    let n = indices.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Gradient of the mean regularized loss over a whole split, accumulated as
/// the sample-weighted mean of fixed-order chunk gradients.
pub fn full_gradient(model: &Model, dataset: &Dataset, split: Split, decay: f64) -> Result<GradientSet> {
    let indices = dataset.split(split);
    if indices.is_empty() {
        bail!(Input, "{split:?} split is empty");
    }
    let total = indices.len() as f64;
    let mut acc = GradientSet::zeros_like(model);
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (x, y) = dataset.gather(chunk);
        let g = model.gradient(Batch::new(x.view(), &y), decay)?;
        acc.scaled_add(chunk.len() as f64 / total, &g);
    }
    Ok(acc)
}

/// Mini-batch SGD with per-epoch shuffling. Returns the weights of the epoch
/// with the lowest validation loss (earliest on ties) and the full history.
pub fn train(model: &Model, dataset: &Dataset, cfg: &TrainConfig) -> Result<(Model, Vec<EpochRecord>)> {
    cfg.validate()?;
    check_classes(model, dataset)?;
    if dataset.split(Split::Train).is_empty() || dataset.split(Split::Validation).is_empty() {
        bail!(Input, "training needs nonempty train and validation splits");
    }
    let mut current = model.clone();
    let mut best: Option<(f64, Model)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order = dataset.split(Split::Train).to_vec();

    for epoch in 0..cfg.epochs {
        let rate = cfg.schedule.rate_at(epoch);
        order.copy_from_slice(dataset.split(Split::Train));
        order.shuffle(&mut stream(cfg.seed, purpose::SHUFFLE, epoch as u64));

        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = dataset.gather(chunk);
            let (loss, grads) = current.loss_and_gradient(Batch::new(x.view(), &y), cfg.weight_decay)?;
            if !loss.is_finite() {
                bail!(Numeric, "training loss diverged at epoch {epoch}");
            }
            loss_sum += loss * chunk.len() as f64;
            current.sgd_step(&grads, rate)?;
        }

        let (validation_loss, validation_accuracy) = evaluate(&current, dataset, Split::Validation)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            validation_loss,
            validation_accuracy,
        });
        if best.as_ref().is_none_or(|(l, _)| validation_loss < *l) {
            best = Some((validation_loss, current.clone()));
        }
    }
    let (_, model) = best.expect("at least one epoch ran");
    Ok((model, history))
}
