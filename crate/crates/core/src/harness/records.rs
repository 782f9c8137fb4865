//! Per-cell record files and the flat CSV views derived from them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::metrics::{alpha, intensifications, profile, recall_variance, ClassBalanceProfile, ConfusionMatrix};
use crate::pruning::MethodTag;

/// What a cell file stores: raw confusion matrices, from which every metric
/// is recomputed on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    /// Content hash of everything that determines this cell's result.
    pub key: String,
    pub dataset: String,
    pub arch: String,
    pub method: MethodTag,
    pub ratio: f64,
    pub seed: u64,
    pub outcome: CellOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum CellOutcome {
    Ok {
        before: ConfusionMatrix,
        after: ConfusionMatrix,
        achieved_ratio: f64,
        wall_clock_seconds: f64,
    },
    Failed {
        error: String,
    },
}

impl CellRecord {
    pub fn is_ok(&self) -> bool {
        matches!(self.outcome, CellOutcome::Ok { .. })
    }

    pub fn file_name(method: MethodTag, ratio: f64, seed: u64) -> String {
        format!("{method}_r{ratio}_s{seed}.json")
    }

    pub fn run_record(&self) -> Result<Option<RunRecord>> {
        let CellOutcome::Ok {
            before,
            after,
            achieved_ratio,
            wall_clock_seconds,
        } = &self.outcome
        else {
            return Ok(None);
        };
        if before.total() != after.total() || before.classes() != after.classes() {
            bail!(Format, "cell {}: before and after were evaluated on different test sets", self.key);
        }
        let pre = profile(before)?;
        let post = profile(after)?;
        let alpha = match alpha(&pre, &post) {
            Ok(a) => Some(a),
            Err(Error::Degenerate(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Some(RunRecord {
            dataset: self.dataset.clone(),
            arch: self.arch.clone(),
            method: self.method,
            ratio: self.ratio,
            seed: self.seed,
            intensification: intensifications(&pre, &post)?,
            recall_var_before: recall_variance(&pre)?,
            recall_var_after: recall_variance(&post)?,
            alpha,
            before: pre,
            after: post,
            balanced: before.is_balanced(),
            achieved_ratio: *achieved_ratio,
            wall_clock_seconds: *wall_clock_seconds,
        }))
    }
}

/// One pruned model's measurements.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub dataset: String,
    pub arch: String,
    pub method: MethodTag,
    pub ratio: f64,
    pub seed: u64,
    pub before: ClassBalanceProfile,
    pub after: ClassBalanceProfile,
    pub intensification: Vec<Option<f64>>,
    /// `None` when every pre-pruning balance is zero.
    pub alpha: Option<f64>,
    pub recall_var_before: f64,
    pub recall_var_after: f64,
    pub balanced: bool,
    pub achieved_ratio: f64,
    pub wall_clock_seconds: f64,
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_cell(path: &Path) -> Result<CellRecord> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Every cell file under `root`, at any depth, in path order.
pub fn load_cells(root: &Path) -> Result<Vec<CellRecord>> {
    let mut files = Vec::new();
    collect_cell_files(root, &mut files)?;
    files.sort();
    files.iter().map(|p| read_cell(p)).collect()
}

fn collect_cell_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_cell_files(&path, out)?;
        } else if path.extension().is_some_and(|x| x == "json")
            && path.parent().and_then(Path::file_name).is_some_and(|n| n == "cells")
        {
            out.push(path);
        }
    }
    Ok(())
}

/// Successful cells as run records, ordered by (dataset, arch, method, ratio, seed).
pub fn run_records(cells: &[CellRecord]) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for c in cells {
        if let Some(r) = c.run_record()? {
            out.push(r);
        }
    }
    out.sort_by(|a, b| {
        (&a.dataset, &a.arch, a.method)
            .cmp(&(&b.dataset, &b.arch, b.method))
            .then(a.ratio.total_cmp(&b.ratio))
            .then(a.seed.cmp(&b.seed))
    });
    Ok(out)
}

fn na(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Format(format!("{}: {e}", path.display()))
}

pub fn write_runs_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record([
        "dataset",
        "arch",
        "method",
        "ratio",
        "seed",
        "acc_before",
        "acc_after",
        "alpha",
        "recall_var_before",
        "recall_var_after",
    ])
    .map_err(&err)?;
    for r in records {
        w.write_record([
            r.dataset.clone(),
            r.arch.clone(),
            r.method.to_string(),
            r.ratio.to_string(),
            r.seed.to_string(),
            r.before.accuracy.to_string(),
            r.after.accuracy.to_string(),
            na(r.alpha),
            r.recall_var_before.to_string(),
            r.recall_var_after.to_string(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_recalls_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record([
        "dataset",
        "arch",
        "method",
        "ratio",
        "seed",
        "class",
        "recall_before",
        "recall_after",
        "balance_before",
        "balance_after",
        "normalized_balance_before",
        "normalized_balance_after",
        "intensification_or_NA",
    ])
    .map_err(&err)?;
    for r in records {
        for c in 0..r.before.classes() {
            w.write_record([
                r.dataset.clone(),
                r.arch.clone(),
                r.method.to_string(),
                r.ratio.to_string(),
                r.seed.to_string(),
                c.to_string(),
                r.before.recall[c].to_string(),
                r.after.recall[c].to_string(),
                r.before.balance[c].to_string(),
                r.after.balance[c].to_string(),
                r.before.normalized[c].to_string(),
                r.after.normalized[c].to_string(),
                na(r.intensification[c]),
            ])
            .map_err(&err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_failures_csv(cells: &[CellRecord], path: &Path) -> Result<()> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record(["dataset", "arch", "method", "ratio", "seed", "error"]).map_err(&err)?;
    for c in cells {
        if let CellOutcome::Failed { error } = &c.outcome {
            w.write_record([
                c.dataset.clone(),
                c.arch.clone(),
                c.method.to_string(),
                c.ratio.to_string(),
                c.seed.to_string(),
                error.clone(),
            ])
            .map_err(&err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
