//! Generators and reference implementations shared by the integration tests.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use prunelab::metrics::ConfusionMatrix;
use prunelab::nn::{numerical_gradient, ArchitectureSpec, Batch, LayerSpec, Model};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A small random architecture: a one-hidden-layer perceptron or a
/// single-conv net, at most 200 parameters.
pub fn random_arch(r: &mut ChaCha8Rng) -> ArchitectureSpec {
    let classes = r.random_range(2..=4);
    if r.random_bool(0.5) {
        let inputs = r.random_range(2..=6);
        let hidden = r.random_range(2..=8);
        ArchitectureSpec::mlp(inputs, hidden, classes)
    } else {
        let side = r.random_range(4..=5);
        let kernel = r.random_range(2..=3);
        let channels = r.random_range(1..=2);
        let out = side - kernel + 1;
        ArchitectureSpec {
            input: vec![1, side, side],
            classes,
            layers: vec![
                LayerSpec::Conv { channels, kernel },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: channels * out * out,
                    outputs: classes,
                },
            ],
        }
    }
}

/// Random model with perturbed biases and about a fifth of its weights masked.
pub fn random_model(r: &mut ChaCha8Rng) -> Model {
    let arch = random_arch(r);
    let base = Model::new(arch.clone(), r.random()).unwrap();
    let parts = base
        .layers()
        .iter()
        .map(|l| {
            let mask = l.mask().mapv(|_| r.random_bool(0.8));
            let weight = Array2::from_shape_fn(l.weight().dim(), |(i, j)| {
                if mask[[i, j]] {
                    l.weight()[[i, j]] * 2.0
                } else {
                    0.0
                }
            });
            let bias = Array1::from_shape_fn(l.bias().len(), |_| r.random_range(-0.5..0.5));
            (weight, bias, mask)
        })
        .collect();
    Model::from_parts(arch, parts).unwrap()
}

pub fn random_batch(r: &mut ChaCha8Rng, model: &Model, n: usize) -> (Array2<f64>, Vec<usize>) {
    let width = model.arch().input_len();
    let x = Array2::from_shape_fn((n, width), |_| r.random_range(-1.0..1.0));
    let y = (0..n).map(|_| r.random_range(0..model.classes())).collect();
    (x, y)
}

pub fn param_count(model: &Model) -> usize {
    model.layers().iter().map(|l| l.weight().len() + l.bias().len()).sum()
}

/// Worst `|analytic − numeric| / max(1e-4·max(|a|, |n|), 1e-7)` over all
/// gradient entries; at most 1 means every entry is within tolerance.
pub fn gradient_violation(model: &Model, x: &Array2<f64>, y: &[usize], decay: f64) -> f64 {
    let batch = Batch::new(x.view(), y);
    let analytic = model.gradient(batch, decay).unwrap();
    let numeric = numerical_gradient(model, batch, decay, 1e-6).unwrap();
    let pairs = analytic
        .weights
        .iter()
        .zip(&numeric.weights)
        .flat_map(|(a, n)| a.iter().copied().zip(n.iter().copied()).collect::<Vec<_>>())
        .chain(
            analytic
                .biases
                .iter()
                .zip(&numeric.biases)
                .flat_map(|(a, n)| a.iter().copied().zip(n.iter().copied()).collect::<Vec<_>>()),
        );
    pairs
        .map(|(a, n)| (a - n).abs() / (1e-4 * a.abs().max(n.abs())).max(1e-7))
        .fold(0.0, f64::max)
}

/// Balanced confusion matrix: `per` samples in each of `k` classes, each
/// predicted correctly with probability `skill`, otherwise uniformly.
pub fn random_confusion(r: &mut ChaCha8Rng, k: usize, per: u64, skill: f64) -> ConfusionMatrix {
    let mut counts = vec![0u64; k * k];
    for t in 0..k {
        for _ in 0..per {
            let p = if r.random_bool(skill) { t } else { r.random_range(0..k) };
            counts[t * k + p] += 1;
        }
    }
    ConfusionMatrix::from_counts(k, counts).unwrap()
}

/// Student's t CDF for integer `df` by the closed-form trigonometric series
/// (Abramowitz & Stegun 26.7.3 / 26.7.4).
pub fn t_cdf_series(t: f64, df: u32) -> f64 {
    let theta = (t.abs() / f64::from(df).sqrt()).atan();
    let (s, c) = theta.sin_cos();
    let a = if df % 2 == 1 {
        let mut sum = 0.0;
        if df > 1 {
            let mut term = c;
            sum = term;
            let mut k = 3;
            while k <= df - 2 {
                term *= c * c * f64::from(k - 1) / f64::from(k);
                sum += term;
                k += 2;
            }
        }
        2.0 / std::f64::consts::PI * (theta + s * sum)
    } else {
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 2;
        while k <= df - 2 {
            term *= c * c * f64::from(k - 1) / f64::from(k);
            sum += term;
            k += 2;
        }
        s * sum
    };
    if t >= 0.0 {
        0.5 + 0.5 * a
    } else {
        0.5 - 0.5 * a
    }
}

/// Slope through the origin found from three evaluations of the squared
/// error, which is exactly quadratic in the slope.
pub fn slope_by_sse(x: &[f64], y: &[f64]) -> f64 {
    let sse = |a: f64| x.iter().zip(y).map(|(xi, yi)| (yi - a * xi).powi(2)).sum::<f64>();
    let (f0, f1, f2) = (sse(-1.0), sse(0.0), sse(1.0));
    let curvature = f0 - 2.0 * f1 + f2;
    (f0 - f2) / (2.0 * curvature)
}

/// Kolmogorov–Smirnov distance between a sample and Uniform(0, 1).
pub fn ks_uniform(mut p: Vec<f64>) -> f64 {
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
        .fold(0.0, f64::max)
}
