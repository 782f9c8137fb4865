//! Labeled sample collections with train/validation/test splits.

mod idx;
mod synth;

pub use idx::{decode_pair, load_idx, parse_idx, IdxArray, IdxOptions};
pub use synth::{synth_balanced, SynthSpec};

use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use crate::error::{bail, Result};
use crate::rng::{purpose, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Samples stored one per row (shared between split variants), integer labels, and index lists for each split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    features: Arc<Array2<f64>>,
    labels: Vec<usize>,
    classes: usize,
    train: Vec<usize>,
    validation: Vec<usize>,
    test: Vec<usize>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Array2<f64>,
        labels: Vec<usize>,
        classes: usize,
        train: Vec<usize>,
        validation: Vec<usize>,
        test: Vec<usize>,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            bail!(Input, "{} samples but {} labels", features.nrows(), labels.len());
        }
        if classes < 2 {
            bail!(Input, "need at least 2 classes, got {classes}");
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            bail!(Input, "label {bad} outside [0, {classes})");
        }
        let mut seen = vec![false; labels.len()];
        for &i in train.iter().chain(&validation).chain(&test) {
            match seen.get_mut(i) {
                Some(s) if !*s => *s = true,
                Some(_) => bail!(Input, "sample {i} appears in more than one split slot"),
                None => bail!(Input, "split index {i} out of range"),
            }
        }
        Ok(Dataset {
            name: name.into(),
            features: Arc::new(features),
            labels,
            classes,
            train,
            validation,
            test,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn feature_len(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn split(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    /// Copies the given samples into a contiguous batch.
    pub fn gather(&self, indices: &[usize]) -> (Array2<f64>, Vec<usize>) {
        (
            self.features.select(Axis(0), indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn class_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &i in self.split(split) {
            counts[self.labels[i]] += 1;
        }
        counts
    }

    /// True iff the test split has the same number of samples in every class.
    pub fn is_balanced(&self) -> bool {
        let counts = self.class_counts(Split::Test);
        counts.iter().all(|&c| c == counts[0])
    }

    /// Trims every class of the test split to the smallest class count,
    /// keeping the earliest samples of each class.
    pub fn balance_test(&mut self) {
        let target = *self.class_counts(Split::Test).iter().min().unwrap_or(&0);
        let mut kept = vec![0; self.classes];
        let labels = &self.labels;
        self.test.retain(|&i| {
            let c = labels[i];
            kept[c] += 1;
            kept[c] <= target
        });
    }

    /// Keeps only the first `limit` training samples (in stored order).
    pub fn limit_train(&mut self, limit: usize) {
        self.train.truncate(limit);
    }

    /// Moves the last `fraction` of a seeded shuffle of the training split
    /// into validation. Any existing validation samples return to training first.
    pub fn carve_validation(&self, fraction: f64, seed: u64) -> Result<Dataset> {
        if !(0.0..1.0).contains(&fraction) {
            bail!(Config, "validation fraction must lie in [0, 1), got {fraction}");
        }
        let mut pool: Vec<usize> = self.train.iter().chain(&self.validation).copied().collect();
        pool.sort_unstable();
        pool.shuffle(&mut stream(seed, purpose::SPLIT, 0));
        let n_val = (pool.len() as f64 * fraction).round() as usize;
        let mut validation = pool.split_off(pool.len() - n_val);
        pool.sort_unstable();
        validation.sort_unstable();
        let mut out = self.clone();
        out.train = pool;
        out.validation = validation;
        Ok(out)
    }
}
