use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use prunelab::data::Split;
use prunelab::harness::report::{load_report, save_report};
use prunelab::harness::{
    analyze, load_cells, render_text, run_experiment, run_records, write_csv, ComparisonPlan, ExperimentConfig,
    ReportFormat, RunOptions,
};
use prunelab::metrics::{alpha, confusion, profile, write_profile_csv};
use prunelab::nn::{evaluate, load_model, save_model, train, Model};
use prunelab::pruning::{apply, dataset_scores, plan, write_plan_csv, MethodTag, PruneMethod};
use prunelab::{Error, Result};

#[derive(Parser)]
#[command(name = "prunelab", version, about = "Pruning experiments with per-class recall analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model with the dataset, model and train sections of a config.
    Train {
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prune a trained model and fine-tune it with the config's finetune section.
    Prune {
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        method: MethodTag,
        #[arg(long)]
        ratio: f64,
        /// Seed for the validation carve, fine-tune shuffling and RP scores.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Per-weight scores and prune decisions.
        #[arg(long)]
        plan_csv: Option<PathBuf>,
        /// Per-class recall and balance of the pruned model.
        #[arg(long)]
        profile_csv: Option<PathBuf>,
    },
    /// Run or resume a multi-seed experiment.
    Experiment {
        #[command(subcommand)]
        action: ExperimentAction,
    },
    /// Test hypotheses over stored records.
    Analyze {
        records: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        /// Defaults to <records>/analysis.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render an analysis as CSV tables or text.
    Report {
        analysis: PathBuf,
        #[arg(long, default_value = "text")]
        format: ReportFormat,
        /// Output directory; defaults to the analysis file's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ExperimentAction {
    Run {
        config: PathBuf,
        #[arg(long, env = "PRUNELAB_WORKERS")]
        workers: Option<usize>,
    },
    /// Like `run`, but requires existing output and retries failed cells.
    Resume {
        config: PathBuf,
        #[arg(long, env = "PRUNELAB_WORKERS")]
        workers: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Usage(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train { config, seed, out } => cmd_train(&config, seed, &out),
        Command::Prune {
            config,
            model,
            method,
            ratio,
            seed,
            out,
            plan_csv,
            profile_csv,
        } => cmd_prune(&config, &model, method, ratio, seed, &out, plan_csv.as_deref(), profile_csv.as_deref()),
        Command::Experiment { action } => {
            let (config, workers, resume) = match action {
                ExperimentAction::Run { config, workers } => (config, workers, false),
                ExperimentAction::Resume { config, workers } => (config, workers, true),
            };
            cmd_experiment(&config, workers, resume)
        }
        Command::Analyze { records, plan, out } => {
            let cells = load_cells(&records)?;
            let report = analyze(&run_records(&cells)?, &ComparisonPlan::load(&plan)?)?;
            let out = out.unwrap_or_else(|| records.join("analysis.json"));
            save_report(&report, &out)?;
            println!(
                "{} families, {} cells, {} gaps -> {}",
                report.families.len(),
                report.cells.len(),
                report.gaps.len(),
                out.display()
            );
            Ok(())
        }
        Command::Report { analysis, format, out } => {
            let report = load_report(&analysis)?;
            let dir = out.unwrap_or_else(|| analysis.parent().unwrap_or(Path::new(".")).to_path_buf());
            match format {
                ReportFormat::Csv => {
                    for f in write_csv(&report, &dir)? {
                        println!("{}", f.display());
                    }
                }
                ReportFormat::Text => {
                    let text = render_text(&report);
                    std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
                    let path = dir.join("summary.txt");
                    std::fs::write(&path, &text).map_err(|e| Error::Io { path, source: e })?;
                    print!("{text}");
                }
            }
            Ok(())
        }
    }
}

fn cmd_train(config: &Path, seed: u64, out: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let ds = cfg.dataset.for_seed(&cfg.dataset.load()?, seed)?;
    let (model, history) = train(&Model::new(cfg.model.clone(), seed)?, &ds, &cfg.train.with_seed(seed))?;
    for h in &history {
        println!(
            "epoch {:>3}  train loss {:.5}  val loss {:.5}  val acc {:.4}",
            h.epoch, h.train_loss, h.validation_loss, h.validation_accuracy
        );
    }
    let (_, acc) = evaluate(&model, &ds, Split::Test)?;
    save_model(&model, out)?;
    println!("test accuracy {acc:.4} -> {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_prune(
    config: &Path,
    model_path: &Path,
    tag: MethodTag,
    ratio: f64,
    seed: u64,
    out: &Path,
    plan_csv: Option<&Path>,
    profile_csv: Option<&Path>,
) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let ds = cfg.dataset.for_seed(&cfg.dataset.load()?, seed)?;
    let model = load_model(model_path)?;
    let ft = cfg.finetune.with_seed(seed);
    ft.validate()?;
    let method = PruneMethod::from_tag(tag, cfg.up_decay(), seed);
    let scores = dataset_scores(&model, method, &ds, ft.weight_decay)?;
    let plan = plan(&scores, ratio)?;
    if let Some(p) = plan_csv {
        let f = std::fs::File::create(p).map_err(|e| Error::Io { path: p.into(), source: e })?;
        write_plan_csv(&scores, &plan, std::io::BufWriter::new(f))?;
    }
    let mut pruned = model.clone();
    let achieved = apply(&mut pruned, &plan)?;
    let (tuned, _) = train(&pruned, &ds, &ft)?;
    save_model(&tuned, out)?;

    let before = profile(&confusion(&model, &ds, Split::Test)?)?;
    let after = profile(&confusion(&tuned, &ds, Split::Test)?)?;
    if let Some(p) = profile_csv {
        let f = std::fs::File::create(p).map_err(|e| Error::Io { path: p.into(), source: e })?;
        write_profile_csv(&after, Some(&before), std::io::BufWriter::new(f))?;
    }
    let slope = alpha(&before, &after).map_or_else(|e| format!("undefined ({e})"), |a| format!("{a:.4}"));
    println!(
        "{tag} t={ratio}: kept {}/{} (achieved ratio {achieved:.4}), accuracy {:.4} -> {:.4}, alpha {slope}",
        plan.keep, plan.eligible, before.accuracy, after.accuracy
    );
    Ok(())
}

fn cmd_experiment(config: &Path, workers: Option<usize>, resume: bool) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    if resume && !cfg.experiment.output.join("config.json").exists() {
        return Err(Error::Usage(format!(
            "nothing to resume in {}",
            cfg.experiment.output.display()
        )));
    }
    let summary = run_experiment(&cfg, &RunOptions { workers, verbose: true })?;
    println!(
        "{} records ({} computed, {} reused, {} failed), {} models trained -> {}",
        summary.records.len(),
        summary.computed_cells,
        summary.reused_cells,
        summary.failed(),
        summary.trained_models,
        summary.output.display()
    );
    Ok(())
}
