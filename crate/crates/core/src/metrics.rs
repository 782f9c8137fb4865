//! Per-class recall balance and intensification.
//!
//! For a model with accuracy `A` and per-class recall `Rᶜ` on a test split:
//! balance `Bᶜ = Rᶜ − A`, normalized balance `B̄ᶜ = Bᶜ / A`. Comparing a model
//! before and after pruning, the intensification ratio is `Iᶜ = B̄ᶜ_after / B̄ᶜ_before`
//! and the slope `α` is the no-intercept least-squares fit of after on before,
//! which equals the `(B̄ᶜ)²`-weighted mean of the `Iᶜ`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{bail, Error, Result};
use crate::nn::Model;

const PREDICT_CHUNK: usize = 1024;

/// Counts indexed by `(true class, predicted class)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    /// Row-major `classes × classes` counts.
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if classes < 2 {
            bail!(Input, "confusion matrix needs at least 2 classes");
        }
        if counts.len() != classes * classes {
            bail!(Shape, "{} counts for {classes} classes", counts.len());
        }
        if counts.iter().all(|&c| c == 0) {
            bail!(Input, "confusion matrix is empty");
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn from_predictions(classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            bail!(Shape, "{} labels but {} predictions", truth.len(), predicted.len());
        }
        let mut counts = vec![0u64; classes * classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                bail!(Input, "class index outside [0, {classes})");
            }
            counts[t * classes + p] += 1;
        }
        Self::from_counts(classes, counts)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn row_total(&self, c: usize) -> u64 {
        self.counts[c * self.classes..(c + 1) * self.classes].iter().sum()
    }

    pub fn col_total(&self, c: usize) -> u64 {
        (0..self.classes).map(|r| self.get(r, c)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    /// Every class has the same number of samples.
    pub fn is_balanced(&self) -> bool {
        let first = self.row_total(0);
        (1..self.classes).all(|c| self.row_total(c) == first)
    }
}

/// Confusion matrix of `model` over one split of `dataset`.
pub fn confusion(model: &Model, dataset: &Dataset, split: Split) -> Result<ConfusionMatrix> {
    let indices = dataset.split(split);
    if indices.is_empty() {
        bail!(Input, "{split:?} split is empty");
    }
    let mut truth = Vec::with_capacity(indices.len());
    let mut predicted = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(PREDICT_CHUNK) {
        let (x, y) = dataset.gather(chunk);
        predicted.extend(model.predict(x.view())?);
        truth.extend(y);
    }
    ConfusionMatrix::from_predictions(model.classes(), &truth, &predicted)
}

/// Accuracy, recall, balance and normalized balance for every class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassBalanceProfile {
    pub accuracy: f64,
    pub recall: Vec<f64>,
    pub balance: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl ClassBalanceProfile {
    /// Builds a profile from real-valued rates (for synthetic studies).
    pub fn from_rates(accuracy: f64, recall: Vec<f64>) -> Result<Self> {
        if !(accuracy > 0.0 && accuracy.is_finite()) {
            bail!(Degenerate, "accuracy must be positive to normalize balances, got {accuracy}");
        }
        if recall.len() < 2 {
            bail!(Input, "need at least 2 classes");
        }
        let balance: Vec<f64> = recall.iter().map(|r| r - accuracy).collect();
        let normalized = balance.iter().map(|b| b / accuracy).collect();
        Ok(ClassBalanceProfile {
            accuracy,
            recall,
            balance,
            normalized,
        })
    }

    pub fn classes(&self) -> usize {
        self.recall.len()
    }
}

/// Profile from exact counts: every quantity is one division of two integers,
/// so rational inputs come out correctly rounded.
pub fn profile(cm: &ConfusionMatrix) -> Result<ClassBalanceProfile> {
    let total = i128::from(cm.total());
    let trace = i128::from(cm.trace());
    if trace == 0 {
        bail!(Degenerate, "accuracy is zero; normalized balance is undefined");
    }
    let k = cm.classes();
    let mut recall = Vec::with_capacity(k);
    let mut balance = Vec::with_capacity(k);
    let mut normalized = Vec::with_capacity(k);
    for c in 0..k {
        let row = i128::from(cm.row_total(c));
        if row == 0 {
            bail!(Degenerate, "class {c} has no samples; recall is undefined");
        }
        let diag = i128::from(cm.get(c, c));
        // Rᶜ − A = (diag·total − trace·row) / (row·total)
        let num = diag * total - trace * row;
        recall.push(diag as f64 / row as f64);
        balance.push(num as f64 / (row * total) as f64);
        normalized.push(num as f64 / (row * trace) as f64);
    }
    Ok(ClassBalanceProfile {
        accuracy: trace as f64 / total as f64,
        recall,
        balance,
        normalized,
    })
}

/// Precision and F-score of class `c` (0/0 counts as 0).
pub fn precision_fscore(cm: &ConfusionMatrix, c: usize) -> Result<(f64, f64)> {
    if c >= cm.classes() {
        bail!(Usage, "class {c} outside [0, {})", cm.classes());
    }
    let diag = cm.get(c, c) as f64;
    let ratio = |d: u64| if d == 0 { 0.0 } else { diag / d as f64 };
    let p = ratio(cm.col_total(c));
    let r = ratio(cm.row_total(c));
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * r * p / (r + p) };
    Ok((p, f))
}

fn check_same_classes(before: &ClassBalanceProfile, after: &ClassBalanceProfile) -> Result<()> {
    if before.classes() != after.classes() {
        bail!(Usage, "profiles cover {} and {} classes", before.classes(), after.classes());
    }
    Ok(())
}

/// `B̄ᶜ_after / B̄ᶜ_before`, or `None` when the before-balance is zero.
pub fn intensification(before: &ClassBalanceProfile, after: &ClassBalanceProfile, c: usize) -> Result<Option<f64>> {
    check_same_classes(before, after)?;
    if c >= before.classes() {
        bail!(Usage, "class {c} outside [0, {})", before.classes());
    }
    let b = before.normalized[c];
    Ok((b != 0.0).then(|| after.normalized[c] / b))
}

pub fn intensifications(before: &ClassBalanceProfile, after: &ClassBalanceProfile) -> Result<Vec<Option<f64>>> {
    (0..before.classes()).map(|c| intensification(before, after, c)).collect()
}

/// No-intercept slope of after-balances on before-balances.
pub fn alpha(before: &ClassBalanceProfile, after: &ClassBalanceProfile) -> Result<f64> {
    check_same_classes(before, after)?;
    let sxx: f64 = before.normalized.iter().map(|b| b * b).sum();
    if sxx == 0.0 {
        bail!(Degenerate, "all normalized balances before pruning are zero");
    }
    let sxy: f64 = before.normalized.iter().zip(&after.normalized).map(|(b, a)| b * a).sum();
    Ok(sxy / sxx)
}

/// Pooled no-intercept fit across several models.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledAlpha {
    pub alpha: f64,
    /// Uncentered coefficient of determination, `1 − SSE / Σy²`.
    pub r_squared: f64,
    /// Mean post-pruning accuracy.
    pub mean_accuracy: f64,
}

pub fn alpha_pooled(pairs: &[(&ClassBalanceProfile, &ClassBalanceProfile)]) -> Result<PooledAlpha> {
    if pairs.is_empty() {
        bail!(Usage, "pooled slope needs at least one model");
    }
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (before, after) in pairs {
        check_same_classes(before, after)?;
        for (x, y) in before.normalized.iter().zip(&after.normalized) {
            sxx += x * x;
            sxy += x * y;
            syy += y * y;
        }
    }
    if sxx == 0.0 {
        bail!(Degenerate, "all normalized balances before pruning are zero");
    }
    let slope = sxy / sxx;
    let sse: f64 = pairs
        .iter()
        .flat_map(|(b, a)| b.normalized.iter().zip(&a.normalized))
        .map(|(x, y)| (y - slope * x).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { (1.0 - sse / syy).clamp(0.0, 1.0) };
    let mean_accuracy = pairs.iter().map(|(_, a)| a.accuracy).sum::<f64>() / pairs.len() as f64;
    Ok(PooledAlpha {
        alpha: slope,
        r_squared,
        mean_accuracy,
    })
}

/// Per-model slopes plus the pooled fit for a group of models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaSummary {
    pub alphas: Vec<f64>,
    pub pooled: PooledAlpha,
    pub intensifications: Vec<Vec<Option<f64>>>,
}

pub fn summarize(pairs: &[(&ClassBalanceProfile, &ClassBalanceProfile)]) -> Result<AlphaSummary> {
    Ok(AlphaSummary {
        alphas: pairs.iter().map(|(b, a)| alpha(b, a)).collect::<Result<_>>()?,
        pooled: alpha_pooled(pairs)?,
        intensifications: pairs.iter().map(|(b, a)| intensifications(b, a)).collect::<Result<_>>()?,
    })
}

/// Population variance of the per-class recalls.
pub fn recall_variance(profile: &ClassBalanceProfile) -> Result<f64> {
    let k = profile.classes();
    if k < 2 {
        bail!(Usage, "recall variance needs at least 2 classes");
    }
    let mean = profile.recall.iter().sum::<f64>() / k as f64;
    Ok(profile.recall.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / k as f64)
}

/// CSV with one row per class; intensification is relative to `baseline`
/// and written as `NA` when undefined or when no baseline is given.
pub fn write_profile_csv<W: Write>(profile: &ClassBalanceProfile, baseline: Option<&ClassBalanceProfile>, out: W) -> Result<()> {
    let ratios = match baseline {
        Some(b) => intensifications(b, profile)?,
        None => vec![None; profile.classes()],
    };
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Format(format!("profile csv: {e}"));
    w.write_record(["class", "recall", "balance", "normalized_balance", "intensification_or_NA"])
        .map_err(err)?;
    for c in 0..profile.classes() {
        w.write_record([
            c.to_string(),
            profile.recall[c].to_string(),
            profile.balance[c].to_string(),
            profile.normalized[c].to_string(),
            ratios[c].map_or_else(|| "NA".to_string(), |v| v.to_string()),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Format(format!("profile csv: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Two classes of 10 samples each with the given correct counts.
    fn two_class(correct_x: u64, correct_y: u64) -> ConfusionMatrix {
        ConfusionMatrix::from_counts(2, vec![correct_x, 10 - correct_x, 10 - correct_y, correct_y]).unwrap()
    }

    #[test]
    fn worked_example_balances() {
        let before = profile(&two_class(9, 7)).unwrap();
        assert_eq!(before.accuracy, 0.8);
        assert_eq!(before.normalized, vec![1.0 / 8.0, -1.0 / 8.0]);
        assert_relative_eq!(before.balance[0], 0.1, max_relative = 1e-15);
        assert_relative_eq!(before.balance[1], -0.1, max_relative = 1e-15);
        let after = profile(&two_class(7, 5)).unwrap();
        assert_eq!(after.normalized[0], 1.0 / 6.0);
        assert_eq!(intensification(&before, &after, 0).unwrap(), Some(4.0 / 3.0));
        assert_eq!(intensification(&before, &after, 1).unwrap(), Some(4.0 / 3.0));
        assert_eq!(alpha(&before, &after).unwrap(), 4.0 / 3.0);
    }

    #[test]
    fn confusion_shapes() {
        let perfect = ConfusionMatrix::from_predictions(3, &[0, 1, 2, 2], &[0, 1, 2, 2]).unwrap();
        assert_eq!(perfect.trace(), perfect.total());
        let constant = ConfusionMatrix::from_predictions(3, &[0, 1, 2, 2], &[0, 0, 0, 0]).unwrap();
        assert_eq!(constant.col_total(0), 4);
        assert_eq!(constant.total(), 4);
        assert!(ConfusionMatrix::from_predictions(2, &[0], &[2]).is_err());
        assert!(ConfusionMatrix::from_counts(2, vec![0; 4]).is_err());
    }

    #[test]
    fn zero_accuracy_is_degenerate() {
        let cm = ConfusionMatrix::from_counts(2, vec![0, 5, 5, 0]).unwrap();
        assert!(matches!(profile(&cm), Err(Error::Degenerate(_))));
        let missing_class = ConfusionMatrix::from_counts(2, vec![3, 1, 0, 0]).unwrap();
        assert!(matches!(profile(&missing_class), Err(Error::Degenerate(_))));
    }

    #[test]
    fn precision_and_fscore() {
        let diag = ConfusionMatrix::from_counts(2, vec![4, 0, 0, 6]).unwrap();
        assert_eq!(precision_fscore(&diag, 0).unwrap(), (1.0, 1.0));
        let cm = ConfusionMatrix::from_counts(2, vec![8, 2, 4, 6]).unwrap();
        let (p, _) = precision_fscore(&cm, 0).unwrap();
        assert_relative_eq!(p, 8.0 / 12.0);
        // Rᶜ = Pᶜ = 0.8 gives Fᶜ = 0.8.
        let sym = ConfusionMatrix::from_counts(2, vec![8, 2, 2, 8]).unwrap();
        let (p, f) = precision_fscore(&sym, 1).unwrap();
        assert_relative_eq!(p, 0.8);
        assert_relative_eq!(f, 0.8);
        let never_predicted = ConfusionMatrix::from_counts(2, vec![0, 5, 0, 5]).unwrap();
        assert_eq!(precision_fscore(&never_predicted, 0).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn identity_and_undefined_intensification() {
        let p = ClassBalanceProfile::from_rates(0.8, vec![0.9, 0.8, 0.7]).unwrap();
        let i = intensifications(&p, &p).unwrap();
        assert_eq!(i[0], Some(1.0));
        assert_eq!(i[1], None);
        assert_eq!(i[2], Some(1.0));
        assert_eq!(alpha(&p, &p).unwrap(), 1.0);
        let flat = ClassBalanceProfile::from_rates(0.5, vec![0.5, 0.5]).unwrap();
        assert!(flat.balance.iter().all(|&b| b == 0.0));
        assert!(matches!(alpha(&flat, &p), Err(Error::Usage(_))));
        assert!(matches!(alpha(&flat, &flat), Err(Error::Degenerate(_))));
    }

    #[test]
    fn pooled_slope_properties() {
        let b = profile(&two_class(9, 7)).unwrap();
        let a = profile(&two_class(7, 5)).unwrap();
        let one = alpha_pooled(&[(&b, &a)]).unwrap();
        assert_eq!(one.alpha, alpha(&b, &a).unwrap());
        assert_relative_eq!(one.r_squared, 1.0);
        assert_relative_eq!(one.mean_accuracy, 0.6);
        let twice = alpha_pooled(&[(&b, &a), (&b, &a)]).unwrap();
        assert_eq!(twice.alpha, one.alpha);
        assert!(alpha_pooled(&[]).is_err());

        let b2 = ClassBalanceProfile::from_rates(0.8, vec![0.9, 0.7, 0.8]).unwrap();
        let a2 = ClassBalanceProfile::from_rates(0.8, vec![0.7, 0.9, 0.8]).unwrap();
        let s = summarize(&[(&b, &a), (&b2, &a2)]).unwrap();
        assert_eq!(s.alphas.len(), 2);
        assert!(s.pooled.r_squared >= 0.0 && s.pooled.r_squared <= 1.0);
    }

    #[test]
    fn recall_variance_values() {
        let p = ClassBalanceProfile::from_rates(0.8, vec![0.9, 0.7]).unwrap();
        assert_relative_eq!(recall_variance(&p).unwrap(), 0.01, max_relative = 1e-12);
        let flat = ClassBalanceProfile::from_rates(0.8, vec![0.8, 0.8, 0.8]).unwrap();
        assert!(recall_variance(&flat).unwrap() < 1e-30);
    }

    #[test]
    fn profile_csv_marks_undefined_ratios() {
        let b = ClassBalanceProfile::from_rates(0.5, vec![0.5, 0.25, 0.75]).unwrap();
        let a = ClassBalanceProfile::from_rates(0.5, vec![0.5, 0.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        write_profile_csv(&a, Some(&b), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "class,recall,balance,normalized_balance,intensification_or_NA");
        assert_eq!(lines[1], "0,0.5,0,0,NA");
        assert_eq!(lines[2], "1,0,-0.5,-1,2");
    }

    proptest! {
        #[test]
        fn recall_variance_is_shift_invariant(r in proptest::collection::vec(0.0f64..0.5, 2..8), shift in 0.0f64..0.4) {
            let a = ClassBalanceProfile::from_rates(0.5, r.clone()).unwrap();
            let b = ClassBalanceProfile::from_rates(0.5, r.iter().map(|v| v + shift).collect()).unwrap();
            prop_assert!((recall_variance(&a).unwrap() - recall_variance(&b).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn balanced_counts_sum_to_zero(k in 2usize..8, per in 1u64..50, seed in any::<u64>()) {
            // Random balanced confusion matrix from a simple LCG.
            let mut s = seed | 1;
            let mut counts = vec![0u64; k * k];
            for t in 0..k {
                for _ in 0..per {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    let p = if (s >> 60) < 10 { t } else { ((s >> 33) as usize) % k };
                    counts[t * k + p] += 1;
                }
            }
            let cm = ConfusionMatrix::from_counts(k, counts).unwrap();
            prop_assume!(cm.trace() > 0);
            let p = profile(&cm).unwrap();
            prop_assert!(p.balance.iter().sum::<f64>().abs() <= 1e-9);
            prop_assert!(p.normalized.iter().sum::<f64>().abs() <= 1e-9);
        }

        #[test]
        fn intensification_sign_semantics(before in -1.0f64..1.0, after in -1.0f64..1.0) {
            prop_assume!(before.abs() > 1e-6);
            // Encode normalized balances directly via accuracy 1 and recalls 1 + B̄.
            let b = ClassBalanceProfile::from_rates(1.0, vec![1.0 + before, 1.0 - before]).unwrap();
            let a = ClassBalanceProfile::from_rates(1.0, vec![1.0 + after, 1.0 - after]).unwrap();
            let i = intensification(&b, &a, 0).unwrap().unwrap();
            let (nb, na) = (b.normalized[0], a.normalized[0]);
            prop_assert_eq!(i > 1.0, na.abs() > nb.abs() && na.signum() == nb.signum());
        }
    }
}
