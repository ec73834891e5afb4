//! Batch pipeline: manifest ingestion, per-record processing, aggregation.

mod aggregate;
mod batch;
mod manifest;
mod process;

use thiserror::Error;

use crate::gateway::GatewayError;
use crate::metrics::MetricsError;
use crate::optimizer::OptimizeError;
use crate::prompt::PromptError;

pub use aggregate::{aggregate, format_rate, render_csv, render_markdown, AggregateRow, GroupBy};
pub use batch::{run_batch, trace_file_name, write_outputs, BatchReport, BatchSummary, FailureEntry};
pub use manifest::{
    bucket_morphology, ingest_manifest, Disorder, ExternalResult, Manifest, MorphologyBucket, Rejection,
    StreetViewRecord,
};
pub use process::{
    process_record, Method, MethodFailure, MethodResult, MetricRates, PipelineSettings, RecordOutcome,
    RecordStatus, RewardSetting,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid H/W ratio {0}: must be finite and >= 0")]
    InvalidHwRatio(f64),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
