//! Multi-seed experiment execution with per-cell persistence.
//!
//! Output layout:
//!
//! ```text
//! <output>/config.json          resolved config
//! <models>/seed_<s>.plab        trained model per seed
//! <models>/seed_<s>.json        its cache key, history and test confusion
//! <output>/cells/<M>_r<t>_s<s>.json
//! <output>/runs.csv, recalls.csv, failed.csv
//! ```
//!
//! Every cached file carries a content hash of its inputs; files whose hash
//! does not match the current config are recomputed, matching ones are reused.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::records::{
    read_cell, run_records, write_atomic, write_failures_csv, write_recalls_csv, write_runs_csv, CellOutcome,
    CellRecord, RunRecord,
};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{confusion, ConfusionMatrix};
use crate::nn::{load_model, save_model, train, EpochRecord, Model};
use crate::pruning::{prune_and_finetune, MethodTag, PruneMethod};

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "PRUNELAB_WORKERS";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Overrides the environment variable when set.
    pub workers: Option<usize>,
    /// Progress lines on stderr.
    pub verbose: bool,
}

impl RunOptions {
    pub fn worker_count(&self) -> Result<usize> {
        if let Some(n) = self.workers {
            return Ok(n.max(1));
        }
        match std::env::var(WORKERS_ENV) {
            Ok(v) => v
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Config(format!("{WORKERS_ENV}={v:?} is not a positive integer"))),
            Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SeedState {
    key: String,
    history: Vec<EpochRecord>,
    test_confusion: ConfusionMatrix,
}

/// What a finished run produced.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub output: PathBuf,
    pub records: Vec<RunRecord>,
    pub cells: Vec<CellRecord>,
    pub trained_models: usize,
    pub computed_cells: usize,
    pub reused_cells: usize,
}

impl RunSummary {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| !c.is_ok()).count()
    }
}

fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config values serialize");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn seed_key(cfg: &ExperimentConfig, seed: u64) -> String {
    hash_json(&("model", &cfg.dataset, &cfg.model, &cfg.train, seed))
}

fn cell_key(cfg: &ExperimentConfig, model_key: &str, method: MethodTag, ratio: f64) -> String {
    let decay = (method == MethodTag::UP).then(|| cfg.up_decay());
    hash_json(&("cell", model_key, &cfg.finetune, method, ratio, decay))
}

fn model_paths(dir: &Path, seed: u64) -> (PathBuf, PathBuf) {
    (dir.join(format!("seed_{seed}.plab")), dir.join(format!("seed_{seed}.json")))
}

fn cached_seed(dir: &Path, seed: u64, key: &str) -> Option<(Model, SeedState)> {
    let (plab, meta) = model_paths(dir, seed);
    let state: SeedState = serde_json::from_slice(&std::fs::read(meta).ok()?).ok()?;
    if state.key != key {
        return None;
    }
    Some((load_model(&plab).ok()?, state))
}

fn train_seed(cfg: &ExperimentConfig, ds: &Dataset, seed: u64, key: &str, dir: &Path) -> Result<(Model, SeedState)> {
    let init = Model::new(cfg.model.clone(), seed)?;
    let (model, history) = train(&init, ds, &cfg.train.with_seed(seed))?;
    let state = SeedState {
        key: key.to_string(),
        history,
        test_confusion: confusion(&model, ds, Split::Test)?,
    };
    let (plab, meta) = model_paths(dir, seed);
    save_model(&model, &plab)?;
    let json = serde_json::to_vec_pretty(&state).map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(&meta, &json)?;
    Ok((model, state))
}

/// Seed, cache key, the model or why training failed, and whether it was trained now.
type Trained = (u64, String, std::result::Result<(Model, SeedState), String>, bool);

struct Cell {
    seed: u64,
    method: MethodTag,
    ratio: f64,
}

/// Trains one model per seed (or reuses a cached one), then prunes and
/// fine-tunes a copy of it for every (method, ratio) cell. Completed cells
/// with a matching content hash are skipped; failed cells are recorded and
/// retried on the next run.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    let out = cfg.experiment.output.clone();
    let models = cfg.models_dir();
    for dir in [models.clone(), out.join("cells")] {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let snapshot = serde_json::to_vec_pretty(cfg).map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(&out.join("config.json"), &snapshot)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.worker_count()?)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let dataset_label = cfg.dataset_label();
    let arch_label = cfg.arch_label();
    let log = |msg: String| {
        if opts.verbose {
            eprintln!("[{}] {msg}", cfg.experiment.name);
        }
    };

    let loaded = cfg.dataset.load()?;
    let seeds = &cfg.experiment.seeds;

    // Phase 1: one trained model per seed.
    let trained: Vec<Trained> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let key = seed_key(cfg, seed);
                if let Some(hit) = cached_seed(&models, seed, &key) {
                    return (seed, key, Ok(hit), false);
                }
                let t0 = Instant::now();
                let res = cfg
                    .dataset
                    .for_seed(&loaded, seed)
                    .and_then(|ds| train_seed(cfg, &ds, seed, &key, &models))
                    .map_err(|e| e.to_string());
                match &res {
                    Ok((_, s)) => log(format!(
                        "seed {seed}: trained in {:.1}s, test accuracy {:.4}",
                        t0.elapsed().as_secs_f64(),
                        s.test_confusion.trace() as f64 / s.test_confusion.total() as f64
                    )),
                    Err(e) => log(format!("seed {seed}: training failed: {e}")),
                }
                (seed, key, res, true)
            })
            .collect()
    });
    let trained_models = trained.iter().filter(|t| t.3).count();

    // Phase 2: every (seed, method, ratio) cell.
    let mut cells = Vec::new();
    for &seed in seeds {
        for &method in &cfg.experiment.methods {
            for &ratio in &cfg.experiment.ratios {
                cells.push(Cell { seed, method, ratio });
            }
        }
    }
    let results: Vec<(CellRecord, bool)> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| -> Result<(CellRecord, bool)> {
                let (_, model_key, state, _) = trained.iter().find(|t| t.0 == cell.seed).expect("every seed trained");
                let key = cell_key(cfg, model_key, cell.method, cell.ratio);
                let path = out.join("cells").join(CellRecord::file_name(cell.method, cell.ratio, cell.seed));
                if let Ok(existing) = read_cell(&path) {
                    if existing.key == key && existing.is_ok() {
                        return Ok((existing, false));
                    }
                }
                let t0 = Instant::now();
                let outcome = match state {
                    Err(e) => CellOutcome::Failed {
                        error: format!("training failed: {e}"),
                    },
                    Ok((model, seed_state)) => match run_cell(cfg, &loaded, model, cell) {
                        Ok((after, achieved_ratio)) => CellOutcome::Ok {
                            before: seed_state.test_confusion.clone(),
                            after,
                            achieved_ratio,
                            wall_clock_seconds: t0.elapsed().as_secs_f64(),
                        },
                        Err(e) => CellOutcome::Failed { error: e.to_string() },
                    },
                };
                let record = CellRecord {
                    key,
                    dataset: dataset_label.clone(),
                    arch: arch_label.clone(),
                    method: cell.method,
                    ratio: cell.ratio,
                    seed: cell.seed,
                    outcome,
                };
                let json = serde_json::to_vec_pretty(&record).map_err(|e| Error::Format(e.to_string()))?;
                write_atomic(&path, &json)?;
                match &record.outcome {
                    CellOutcome::Ok { after, .. } => log(format!(
                        "{} t={} seed {}: accuracy after {:.4} ({:.1}s)",
                        cell.method,
                        cell.ratio,
                        cell.seed,
                        after.trace() as f64 / after.total() as f64,
                        t0.elapsed().as_secs_f64()
                    )),
                    CellOutcome::Failed { error } => {
                        log(format!("{} t={} seed {}: failed: {error}", cell.method, cell.ratio, cell.seed))
                    }
                }
                Ok((record, true))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let computed_cells = results.iter().filter(|r| r.1).count();
    let cells: Vec<CellRecord> = results.into_iter().map(|r| r.0).collect();

    let records = run_records(&cells)?;
    write_runs_csv(&records, &out.join("runs.csv"))?;
    write_recalls_csv(&records, &out.join("recalls.csv"))?;
    write_failures_csv(&cells, &out.join("failed.csv"))?;
    Ok(RunSummary {
        output: out,
        reused_cells: cells.len() - computed_cells,
        records,
        cells,
        trained_models,
        computed_cells,
    })
}

fn run_cell(cfg: &ExperimentConfig, loaded: &Dataset, model: &Model, cell: &Cell) -> Result<(ConfusionMatrix, f64)> {
    let ds = cfg.dataset.for_seed(loaded, cell.seed)?;
    let method = PruneMethod::from_tag(cell.method, cfg.up_decay(), cell.seed);
    let outcome = prune_and_finetune(model, method, cell.ratio, &ds, &cfg.finetune.with_seed(cell.seed))?;
    Ok((confusion(&outcome.model, &ds, Split::Test)?, outcome.achieved_ratio))
}
