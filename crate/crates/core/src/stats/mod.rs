//! t-tests, Bonferroni correction and t-based confidence intervals.

mod special;

pub use special::{inc_beta, ln_beta, ln_gamma, t_cdf, t_quantile, t_sf};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    /// `E[x] < E[y]`
    Less,
    /// `E[x] > E[y]`
    Greater,
    TwoSided,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    Paired,
    /// Welch's unequal-variance test.
    Independent,
}

/// Why a test fell back to a limiting p-value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Degeneracy {
    /// No spread but a nonzero mean difference: `t = ±∞`.
    ZeroVarianceNonzeroMean,
    /// No spread and no difference.
    ZeroVarianceZeroMean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub alternative: Alternative,
    pub kind: TestKind,
    pub degenerate: Option<Degeneracy>,
}

impl TestResult {
    /// Applies a Bonferroni factor of `k` to the raw p-value.
    pub fn with_bonferroni(mut self, k: usize) -> Self {
        self.p_adjusted = bonferroni(self.p_raw, k);
        self
    }
}

/// `min(1, k·p)`.
pub fn bonferroni(p: f64, k: usize) -> f64 {
    (p * k.max(1) as f64).min(1.0)
}

// Spread below this fraction of the data magnitude counts as zero, so
// differences that are constant up to rounding take the degenerate path.
const ZERO_SPREAD: f64 = 1e-12;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance (n − 1 denominator).
fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

fn magnitude(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn p_value(t: f64, df: f64, alternative: Alternative) -> f64 {
    match alternative {
        Alternative::Less => t_cdf(t, df),
        Alternative::Greater => t_sf(t, df),
        Alternative::TwoSided => (2.0 * t_sf(t.abs(), df)).min(1.0),
    }
}

fn degenerate(diff: f64, df: f64, alternative: Alternative, kind: TestKind) -> TestResult {
    let (statistic, p, flag) = if diff == 0.0 {
        let p = match alternative {
            Alternative::TwoSided => 1.0,
            _ => 0.5,
        };
        (0.0, p, Degeneracy::ZeroVarianceZeroMean)
    } else {
        let t = if diff > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
        (t, p_value(t, df, alternative), Degeneracy::ZeroVarianceNonzeroMean)
    };
    TestResult {
        statistic,
        df,
        p_raw: p,
        p_adjusted: p,
        alternative,
        kind,
        degenerate: Some(flag),
    }
}

fn finish(t: f64, df: f64, alternative: Alternative, kind: TestKind) -> TestResult {
    let p = p_value(t, df, alternative);
    TestResult {
        statistic: t,
        df,
        p_raw: p,
        p_adjusted: p,
        alternative,
        kind,
        degenerate: None,
    }
}

fn check_sample(x: &[f64], name: &str) -> Result<()> {
    if x.len() < 2 {
        bail!(Input, "{name} needs at least 2 observations, got {}", x.len());
    }
    if x.iter().any(|v| !v.is_finite()) {
        bail!(Input, "{name} contains non-finite values");
    }
    Ok(())
}

/// One-sample t-test of `mean(x) − reference`.
pub fn t_one_sample(x: &[f64], reference: f64, alternative: Alternative) -> Result<TestResult> {
    check_sample(x, "sample")?;
    let d: Vec<f64> = x.iter().map(|v| v - reference).collect();
    Ok(one_sample(&d, alternative, TestKind::Paired))
}

fn one_sample(d: &[f64], alternative: Alternative, kind: TestKind) -> TestResult {
    let n = d.len() as f64;
    let df = n - 1.0;
    let m = mean(d);
    let s = variance(d).sqrt();
    if s <= ZERO_SPREAD * magnitude(d) {
        return degenerate(m, df, alternative, kind);
    }
    finish(m / (s / n.sqrt()), df, alternative, kind)
}

/// Paired t-test on `x − y`.
pub fn t_paired(x: &[f64], y: &[f64], alternative: Alternative) -> Result<TestResult> {
    if x.len() != y.len() {
        bail!(Input, "paired samples differ in length ({} vs {})", x.len(), y.len());
    }
    check_sample(x, "x")?;
    check_sample(y, "y")?;
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    Ok(one_sample(&d, alternative, TestKind::Paired))
}

/// Welch's t-test with Welch–Satterthwaite degrees of freedom.
pub fn t_independent(x: &[f64], y: &[f64], alternative: Alternative) -> Result<TestResult> {
    check_sample(x, "x")?;
    check_sample(y, "y")?;
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let (vx, vy) = (variance(x) / nx, variance(y) / ny);
    let diff = mean(x) - mean(y);
    let se = (vx + vy).sqrt();
    let scale = magnitude(x).max(magnitude(y));
    if se <= ZERO_SPREAD * scale {
        let diff = if diff.abs() <= ZERO_SPREAD * scale { 0.0 } else { diff };
        return Ok(degenerate(diff, nx + ny - 2.0, alternative, TestKind::Independent));
    }
    let df = (vx + vy).powi(2) / (vx * vx / (nx - 1.0) + vy * vy / (ny - 1.0));
    Ok(finish(diff / se, df, alternative, TestKind::Independent))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub n: usize,
}

/// `mean ± t_{(1+level)/2, n−1} · s / √n`.
pub fn ci_mean(x: &[f64], level: f64) -> Result<ConfidenceInterval> {
    check_sample(x, "sample")?;
    if !(level > 0.0 && level < 1.0) {
        bail!(Config, "confidence level must lie in (0, 1), got {level}");
    }
    let n = x.len();
    let m = mean(x);
    let s = variance(x).sqrt();
    let half = if s <= ZERO_SPREAD * magnitude(x) {
        0.0
    } else {
        t_quantile(0.5 * (1.0 + level), (n - 1) as f64) * s / (n as f64).sqrt()
    };
    Ok(ConfidenceInterval {
        lower: m - half,
        upper: m + half,
        level,
        n,
    })
}

/// Position of a confidence interval relative to a reference value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CiClass {
    Below,
    Above,
    Overlaps,
}

impl CiClass {
    pub fn symbol(&self) -> &'static str {
        match self {
            CiClass::Below => "<",
            CiClass::Above => ">",
            CiClass::Overlaps => "?",
        }
    }
}

impl fmt::Display for CiClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// `<` if the interval lies strictly below `reference`, `>` if strictly
/// above, `?` otherwise (touching counts as overlap).
pub fn classify_ci(ci: &ConfidenceInterval, reference: f64) -> CiClass {
    if ci.upper < reference {
        CiClass::Below
    } else if ci.lower > reference {
        CiClass::Above
    } else {
        CiClass::Overlaps
    }
}
