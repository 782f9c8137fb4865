//! Hypothesis tests, confidence intervals and summary series over run records.
//!
//! A comparison plan is a TOML file:
//!
//! ```toml
//! level = 0.99          # confidence level of the per-cell intervals
//! reference = 1.0       # value the intervals are classified against
//!
//! [[family]]
//! name = "ratios"
//! compare = "ratio"     # dataset | arch | method | ratio
//! pairs = "consecutive" # or [["2", "4"], ["4", "10"]]
//! test = "paired"       # paired | independent
//! alternative = "less"  # less | greater | two-sided
//! correction = "column" # column | table
//! filter = { method = ["MP"] }
//! ```
//!
//! Within a family every record is keyed by the three dimensions other than
//! `compare`; each distinct key is a table column and each pair a row. The
//! first value of a pair is the `x` sample, so `less` tests `E[α_x] < E[α_y]`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::records::RunRecord;
use crate::error::{bail, Error, Result};
use crate::metrics::{alpha_pooled, PooledAlpha};
use crate::stats::{
    bonferroni, ci_mean, classify_ci, t_independent, t_paired, Alternative, ConfidenceInterval, TestKind, TestResult,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dim {
    Dataset,
    Arch,
    Method,
    Ratio,
}

impl Dim {
    const ALL: [Dim; 4] = [Dim::Dataset, Dim::Arch, Dim::Method, Dim::Ratio];

    fn value(self, r: &RunRecord) -> String {
        match self {
            Dim::Dataset => r.dataset.clone(),
            Dim::Arch => r.arch.clone(),
            Dim::Method => r.method.to_string(),
            Dim::Ratio => r.ratio.to_string(),
        }
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dim::Dataset => "dataset",
            Dim::Arch => "arch",
            Dim::Method => "method",
            Dim::Ratio => "ratio",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PairSpec {
    /// `"consecutive"`: neighbours in ascending order (numeric for ratios,
    /// first-appearance order otherwise).
    Named(String),
    Explicit(Vec<[String; 2]>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correction {
    /// Multiply by the number of tests in the same column.
    #[default]
    Column,
    /// Multiply by the number of tests in the whole family.
    Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Family {
    pub name: String,
    pub compare: Dim,
    pub pairs: PairSpec,
    pub test: TestKind,
    pub alternative: Alternative,
    #[serde(default)]
    pub correction: Correction,
    /// Keep only records whose dimension value is listed.
    #[serde(default)]
    pub filter: BTreeMap<Dim, Vec<String>>,
}

fn default_level() -> f64 {
    0.99
}

fn default_reference() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonPlan {
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_reference")]
    pub reference: f64,
    #[serde(default, rename = "family")]
    pub families: Vec<Family>,
}

impl ComparisonPlan {
    pub fn parse(text: &str) -> Result<Self> {
        let plan: ComparisonPlan = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            bail!(Config, "confidence level must lie in (0, 1)");
        }
        if !self.reference.is_finite() {
            bail!(Config, "reference value must be finite");
        }
        let mut names = BTreeSet::new();
        for f in &self.families {
            if !names.insert(&f.name) {
                bail!(Config, "duplicate family name {:?}", f.name);
            }
            if f.name.is_empty() || !f.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                bail!(Config, "family name {:?} must be nonempty [A-Za-z0-9_-]", f.name);
            }
            match &f.pairs {
                PairSpec::Named(s) if s != "consecutive" => {
                    bail!(Config, "family {}: pairs must be \"consecutive\" or a list of pairs", f.name)
                }
                PairSpec::Explicit(p) if p.is_empty() => bail!(Config, "family {}: empty pair list", f.name),
                _ => {}
            }
        }
        Ok(())
    }
}

/// One row of a p-value table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub column: String,
    pub row: String,
    pub left: String,
    pub right: String,
    pub n_left: usize,
    pub n_right: usize,
    pub mean_left: f64,
    pub mean_right: f64,
    pub result: TestResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub name: String,
    pub compare: Dim,
    pub test: TestKind,
    pub alternative: Alternative,
    pub correction: Correction,
    /// Row labels in table order.
    pub rows: Vec<String>,
    /// Column labels in table order.
    pub columns: Vec<String>,
    pub comparisons: Vec<Comparison>,
}

impl FamilyReport {
    pub fn lookup(&self, row: &str, column: &str) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.row == row && c.column == column)
    }
}

/// Summary of all models in one (dataset, arch, method, ratio) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub dataset: String,
    pub arch: String,
    pub method: String,
    pub ratio: f64,
    pub n: usize,
    pub mean_alpha: f64,
    pub se_alpha: Option<f64>,
    pub ci: Option<ConfidenceInterval>,
    /// `<`, `>` or `?` relative to the plan's reference value.
    pub class: Option<String>,
    pub pooled: Option<PooledAlpha>,
    pub mean_acc_before: f64,
    pub mean_acc_after: f64,
    pub se_acc_after: Option<f64>,
}

impl CellSummary {
    pub fn group(&self) -> String {
        format!("{}/{}/{}", self.dataset, self.arch, self.method)
    }
}

/// Requested data that could not be analyzed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    pub family: Option<String>,
    pub item: String,
    pub reason: String,
}

/// Per-model point for box plots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelPoint {
    pub dataset: String,
    pub arch: String,
    pub method: String,
    pub ratio: f64,
    pub seed: u64,
    pub alpha: Option<f64>,
    pub acc_before: f64,
    pub acc_after: f64,
}

/// Per-class point for before/after balance scatter plots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPoint {
    pub dataset: String,
    pub arch: String,
    pub method: String,
    pub ratio: f64,
    pub seed: u64,
    pub class: usize,
    pub normalized_before: f64,
    pub normalized_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub level: f64,
    pub reference: f64,
    pub families: Vec<FamilyReport>,
    pub cells: Vec<CellSummary>,
    pub gaps: Vec<Gap>,
    pub models: Vec<ModelPoint>,
    pub classes: Vec<ClassPoint>,
}

impl TestReport {
    pub fn is_partial(&self) -> bool {
        !self.gaps.is_empty()
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Standard error of the mean, `None` below two observations.
pub fn standard_error(x: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let m = mean(x);
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
    Some((var / x.len() as f64).sqrt())
}

fn cmp_values(dim: Dim, a: &str, b: &str) -> std::cmp::Ordering {
    match (dim, a.parse::<f64>(), b.parse::<f64>()) {
        (Dim::Ratio, Ok(x), Ok(y)) => x.total_cmp(&y),
        _ => std::cmp::Ordering::Equal,
    }
}

/// Runs every family of `plan` plus the per-cell summaries.
pub fn analyze(records: &[RunRecord], plan: &ComparisonPlan) -> Result<TestReport> {
    plan.validate()?;
    let mut gaps = Vec::new();
    for r in records.iter().filter(|r| r.alpha.is_none()) {
        gaps.push(Gap {
            family: None,
            item: format!("{}/{}/{} t={} seed {}", r.dataset, r.arch, r.method, r.ratio, r.seed),
            reason: "alpha undefined (all pre-pruning balances are zero)".into(),
        });
    }
    let families = plan
        .families
        .iter()
        .map(|f| run_family(records, f, &mut gaps))
        .collect::<Result<Vec<_>>>()?;
    let cells = summarize_cells(records, plan, &mut gaps)?;
    let models = records
        .iter()
        .map(|r| ModelPoint {
            dataset: r.dataset.clone(),
            arch: r.arch.clone(),
            method: r.method.to_string(),
            ratio: r.ratio,
            seed: r.seed,
            alpha: r.alpha,
            acc_before: r.before.accuracy,
            acc_after: r.after.accuracy,
        })
        .collect();
    let classes = records
        .iter()
        .flat_map(|r| {
            (0..r.before.classes()).map(move |c| ClassPoint {
                dataset: r.dataset.clone(),
                arch: r.arch.clone(),
                method: r.method.to_string(),
                ratio: r.ratio,
                seed: r.seed,
                class: c,
                normalized_before: r.before.normalized[c],
                normalized_after: r.after.normalized[c],
            })
        })
        .collect();
    Ok(TestReport {
        level: plan.level,
        reference: plan.reference,
        families,
        cells,
        gaps,
        models,
        classes,
    })
}

fn run_family(records: &[RunRecord], fam: &Family, gaps: &mut Vec<Gap>) -> Result<FamilyReport> {
    let keep = |r: &&RunRecord| {
        r.alpha.is_some()
            && fam
                .filter
                .iter()
                .all(|(dim, allowed)| allowed.contains(&dim.value(r)))
    };
    let selected: Vec<&RunRecord> = records.iter().filter(keep).collect();
    let other: Vec<Dim> = Dim::ALL.into_iter().filter(|&d| d != fam.compare).collect();
    let column_of = |r: &RunRecord| other.iter().map(|d| d.value(r)).collect::<Vec<_>>().join("/");

    // column -> compare value -> seed -> alpha
    let mut table: BTreeMap<String, BTreeMap<String, BTreeMap<u64, f64>>> = BTreeMap::new();
    let mut columns: Vec<String> = Vec::new();
    let mut seen_values: Vec<String> = Vec::new();
    for r in &selected {
        let col = column_of(r);
        if !columns.contains(&col) {
            columns.push(col.clone());
        }
        let v = fam.compare.value(r);
        if !seen_values.contains(&v) {
            seen_values.push(v.clone());
        }
        let alpha = r.alpha.expect("filtered to defined alpha");
        if table.entry(col).or_default().entry(v).or_default().insert(r.seed, alpha).is_some() {
            bail!(Input, "family {}: duplicate record for seed {}", fam.name, r.seed);
        }
    }
    seen_values.sort_by(|a, b| cmp_values(fam.compare, a, b));

    let pairs: Vec<(String, String)> = match &fam.pairs {
        PairSpec::Named(_) => seen_values.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect(),
        PairSpec::Explicit(list) => list.iter().map(|[a, b]| (a.clone(), b.clone())).collect(),
    };
    let rows: Vec<String> = pairs.iter().map(|(a, b)| format!("{a} vs {b}")).collect();

    let mut comparisons = Vec::new();
    for col in &columns {
        let by_value = &table[col];
        for ((a, b), row) in pairs.iter().zip(&rows) {
            let item = format!("{row} [{col}]");
            let gap = |reason: String| Gap {
                family: Some(fam.name.clone()),
                item: item.clone(),
                reason,
            };
            let (Some(xa), Some(xb)) = (by_value.get(a), by_value.get(b)) else {
                // Consecutive pairs only exist where data exists; explicit
                // pairs can point at cells this column never had.
                let missing = if by_value.contains_key(a) { b } else { a };
                gaps.push(gap(format!("no records for {}={missing}", fam.compare)));
                continue;
            };
            let (x, y): (Vec<f64>, Vec<f64>) = match fam.test {
                TestKind::Paired => {
                    let common: Vec<u64> = xa.keys().filter(|s| xb.contains_key(s)).copied().collect();
                    let unmatched = xa.len() + xb.len() - 2 * common.len();
                    if unmatched > 0 {
                        gaps.push(gap(format!("{unmatched} records without a matching seed were left out")));
                    }
                    common.iter().map(|s| (xa[s], xb[s])).unzip()
                }
                TestKind::Independent => (xa.values().copied().collect(), xb.values().copied().collect()),
            };
            let result = match fam.test {
                TestKind::Paired => t_paired(&x, &y, fam.alternative),
                TestKind::Independent => t_independent(&x, &y, fam.alternative),
            };
            match result {
                Ok(result) => comparisons.push(Comparison {
                    column: col.clone(),
                    row: row.clone(),
                    left: a.clone(),
                    right: b.clone(),
                    n_left: x.len(),
                    n_right: y.len(),
                    mean_left: mean(&x),
                    mean_right: mean(&y),
                    result,
                }),
                Err(Error::Input(msg)) => gaps.push(gap(msg)),
                Err(e) => return Err(e),
            }
        }
    }

    let total = comparisons.len();
    let per_column: BTreeMap<String, usize> = comparisons.iter().fold(BTreeMap::new(), |mut m, c| {
        *m.entry(c.column.clone()).or_default() += 1;
        m
    });
    for c in &mut comparisons {
        let k = match fam.correction {
            Correction::Column => per_column[&c.column],
            Correction::Table => total,
        };
        c.result.p_adjusted = bonferroni(c.result.p_raw, k);
    }
    Ok(FamilyReport {
        name: fam.name.clone(),
        compare: fam.compare,
        test: fam.test,
        alternative: fam.alternative,
        correction: fam.correction,
        rows,
        columns,
        comparisons,
    })
}

fn summarize_cells(records: &[RunRecord], plan: &ComparisonPlan, gaps: &mut Vec<Gap>) -> Result<Vec<CellSummary>> {
    let mut groups: BTreeMap<(String, String, String, u64), Vec<&RunRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.alpha.is_some()) {
        groups
            .entry((r.dataset.clone(), r.arch.clone(), r.method.to_string(), r.ratio.to_bits()))
            .or_default()
            .push(r);
    }
    let mut cells = Vec::new();
    for ((dataset, arch, method, ratio_bits), rs) in groups {
        let ratio = f64::from_bits(ratio_bits);
        let alphas: Vec<f64> = rs.iter().map(|r| r.alpha.expect("filtered")).collect();
        let acc_after: Vec<f64> = rs.iter().map(|r| r.after.accuracy).collect();
        let acc_before: Vec<f64> = rs.iter().map(|r| r.before.accuracy).collect();
        let ci = match ci_mean(&alphas, plan.level) {
            Ok(ci) => Some(ci),
            Err(Error::Input(msg)) => {
                gaps.push(Gap {
                    family: None,
                    item: format!("{dataset}/{arch}/{method} t={ratio}"),
                    reason: format!("no confidence interval: {msg}"),
                });
                None
            }
            Err(e) => return Err(e),
        };
        let pairs: Vec<_> = rs.iter().map(|r| (&r.before, &r.after)).collect();
        let pooled = match alpha_pooled(&pairs) {
            Ok(p) => Some(p),
            Err(Error::Degenerate(_)) => None,
            Err(e) => return Err(e),
        };
        cells.push(CellSummary {
            class: ci.as_ref().map(|c| classify_ci(c, plan.reference).symbol().to_string()),
            dataset,
            arch,
            method,
            ratio,
            n: alphas.len(),
            mean_alpha: mean(&alphas),
            se_alpha: standard_error(&alphas),
            ci,
            pooled,
            mean_acc_before: mean(&acc_before),
            mean_acc_after: mean(&acc_after),
            se_acc_after: standard_error(&acc_after),
        });
    }
    cells.sort_by(|a, b| {
        (&a.dataset, &a.arch, &a.method)
            .cmp(&(&b.dataset, &b.arch, &b.method))
            .then(a.ratio.total_cmp(&b.ratio))
    });
    Ok(cells)
}
