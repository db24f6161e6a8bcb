//! Experiment planning, cached execution, subset sweeps and reports.
//!
//! A variant expands into a small DAG of stages. Every stage has a cache key
//! derived from its kind, parameters, seed, backend identity, input dataset
//! digests and the keys of the stages it depends on, so the whole plan is
//! addressable before anything runs.

mod config;
mod plan;
pub mod report;
mod run;
mod store;

pub use config::ExperimentConfig;
pub use plan::{plan_variant, DatasetInput, PlanInputs, Stage, StageKind, StagePlan, VariantName, VariantSpec};
pub use report::{ReferenceRow, ReportOptions, ScoreLine};
pub use run::{run, sweep, Backends, Experiment, RunRecord, StageOutcome, StageStatus};
pub use store::Store;

use crate::backends::BackendError;
use crate::corpus::CorpusError;
use crate::metrics::MetricsError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot plan variant: {0}")]
    Plan(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("store error at {path}: {source}")]
    Store {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt stage output for {key}: {message}")]
    Output { key: String, message: String },
    #[error("cannot build report: {0}")]
    Report(String),
}

impl PipelineError {
    pub fn is_user_error(&self) -> bool {
        match self {
            PipelineError::Config(_) | PipelineError::Plan(_) | PipelineError::Report(_) => true,
            PipelineError::Corpus(e) => e.is_user_error(),
            PipelineError::Backend(e) => e.is_user_error(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;
