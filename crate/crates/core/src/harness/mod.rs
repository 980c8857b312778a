//! Orchestration of the full training-set by backbone grid and its reports.

mod config;
mod report;
mod run;

pub use config::{CorpusSource, ExperimentConfig};
pub use report::{
    emit_report, plot_rows, summary_rows, table_rows, CellProvenance, CellResult, CorpusSummary, ExperimentReport,
    PairwiseTest, Provenance, ReportFormat, SetMean, StageKind, StageRecord, Status, SCHEMA_VERSION, SETTING_SETS,
};
pub use run::{compare_reports, load_dataset, run_experiment, THREADS_ENV};
