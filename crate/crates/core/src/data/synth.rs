use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{bail, Result};
use crate::rng::{purpose, stream};

/// Parameters of a balanced Gaussian-cluster dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Distance between any two cluster centers.
    pub separation: f64,
    pub seed: u64,
}

/// Unit-variance isotropic Gaussian clusters centered on the vertices of a
/// regular simplex (`separation / √2` along each of the first `classes`
/// axes). Each class is split 60/20/20 into train/validation/test, so every
/// split has equal class counts.
pub fn synth_balanced(spec: &SynthSpec) -> Result<Dataset> {
    let SynthSpec {
        classes,
        per_class,
        dim,
        separation,
        seed,
    } = *spec;
    if classes < 2 {
        bail!(Config, "synthetic data needs at least 2 classes");
    }
    if per_class < 10 {
        bail!(Config, "synthetic data needs at least 10 samples per class");
    }
    if dim < classes {
        bail!(Config, "dimension {dim} cannot hold {classes} simplex vertices");
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        bail!(Config, "separation must be finite and nonnegative");
    }
    let n = classes * per_class;
    let offset = separation / std::f64::consts::SQRT_2;
    let mut rng = stream(seed, purpose::SYNTH, 0);
    let mut features = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    // Class-interleaved order: sample i belongs to class i % classes.
    for i in 0..n {
        let c = i % classes;
        labels.push(c);
        let mut row = features.row_mut(i);
        for v in row.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        row[c] += offset;
    }
    let held = per_class / 5;
    let test_end = held * classes;
    let val_end = 2 * held * classes;
    Dataset::new(
        format!("synth-c{classes}-n{per_class}-d{dim}-s{separation}"),
        features,
        labels,
        classes,
        (val_end..n).collect(),
        (test_end..val_end).collect(),
        (0..test_end).collect(),
    )
}
