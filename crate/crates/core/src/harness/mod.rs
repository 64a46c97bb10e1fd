//! Experiment protocols (swap and add), repeated-run statistics, the
//! correction analysis and report emission.

mod analysis;
mod config;
mod experiment;
mod report;
mod stats;

pub use analysis::{
    agreement_bucket, analyze_corrections, count_bucket, CorrectionAnalysis, CorrectionBucket, CorrectionRow,
    AGREEMENT_BUCKET_EDGES, COUNT_BUCKET_EDGES,
};
pub use config::{is_config_key, load_config_file, parse_config_text, CorpusSource, ExperimentConfig, Protocol};
pub use experiment::{
    load_corpus_source, prepare, random_selection_seed, run_experiment, run_experiment_add, run_experiment_swap,
    run_seed, train_on, ExperimentOutcome, Prepared, Selection, BASELINE,
};
pub use report::{
    emit_report, read_report, write_csv, write_json, AnnotationSummary, ComparisonReport, ComparisonRow,
    ConditionSummary, ReportFormat, RunMetrics,
};
pub use stats::{
    compare_runs, mean, permutation_one_sided, relative_error_reduction, sample_std, welch_one_sided, Comparison,
    PERMUTATION_LIMIT,
};

use crate::corpus::CorpusError;
use crate::neural::NeuralError;
use crate::selection::SelectionError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("significance tests need at least two runs per condition, got {0}")]
    TooFewRuns(usize),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("io error: {0}")]
    Stream(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
