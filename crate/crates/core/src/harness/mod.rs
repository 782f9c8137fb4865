//! Config-driven experiments, persisted records, analysis and reports.

pub mod analysis;
pub mod config;
pub mod records;
pub mod report;
pub mod runner;

pub use analysis::{analyze, ComparisonPlan, TestReport};
pub use config::{DatasetSource, ExperimentConfig};
pub use records::{load_cells, run_records, CellOutcome, CellRecord, RunRecord};
pub use report::{format_p, render_text, write_csv, ReportFormat};
pub use runner::{run_experiment, RunOptions, RunSummary, WORKERS_ENV};
