//! Parallel batch runs and their on-disk outputs.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use super::aggregate::{aggregate, render_csv, render_markdown, GroupBy};
use super::manifest::{Manifest, Rejection};
use super::process::{process_record, MethodResult, PipelineSettings, RecordOutcome, RecordStatus};
use super::PipelineError;
use crate::embedding::EmbeddingVocabulary;
use crate::gateway::Evaluator;
use crate::optimizer::write_trace;

#[derive(Debug, Clone)]
pub struct BatchReport {
    /// One outcome per ingested record, in manifest order.
    pub outcomes: Vec<RecordOutcome>,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureEntry {
    pub record_id: String,
    pub method: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchSummary {
    pub total: usize,
    pub processed: usize,
    pub skipped: usize,
    pub failed: usize,
    pub rejected: usize,
    pub results: usize,
    pub failures: Vec<FailureEntry>,
    pub rejections: Vec<Rejection>,
}

impl BatchReport {
    pub fn results(&self) -> impl Iterator<Item = &MethodResult> {
        self.outcomes.iter().flat_map(|o| o.results.iter())
    }

    fn count(&self, status: RecordStatus) -> usize {
        self.outcomes.iter().filter(|o| o.status == status).count()
    }

    /// `total == processed + skipped + failed + rejected` always holds.
    pub fn summary(&self) -> BatchSummary {
        let failures = self
            .outcomes
            .iter()
            .flat_map(|o| {
                o.failures.iter().map(move |f| FailureEntry {
                    record_id: o.record_id.clone(),
                    method: f.method.to_string(),
                    error: f.error.clone(),
                })
            })
            .collect();
        BatchSummary {
            total: self.outcomes.len() + self.rejected.len(),
            processed: self.count(RecordStatus::Processed),
            skipped: self.count(RecordStatus::Skipped),
            failed: self.count(RecordStatus::Failed),
            rejected: self.rejected.len(),
            results: self.results().count(),
            failures,
            rejections: self.rejected.clone(),
        }
    }
}

/// Processes every record of `manifest` on `workers` threads. Output order
/// matches manifest order regardless of scheduling.
pub fn run_batch<E: Evaluator + ?Sized>(
    manifest: &Manifest,
    vocab: &EmbeddingVocabulary,
    backend: &E,
    settings: &PipelineSettings,
    workers: usize,
) -> BatchReport {
    let settings = settings.with_resolved_lengthscale(vocab);
    let n = manifest.records.len();
    let slots: Vec<Mutex<Option<RecordOutcome>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = workers.clamp(1, n.max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let record = &manifest.records[i];
                log::debug!("processing {}", record.id);
                let outcome = process_record(record, vocab, backend, &settings);
                *slots[i].lock().expect("slot lock") = Some(outcome);
            });
        }
    });

    BatchReport {
        outcomes: slots
            .into_iter()
            .map(|s| s.into_inner().expect("slot lock").expect("every record processed"))
            .collect(),
        rejected: manifest.rejected.clone(),
    }
}

/// File-system safe name for a record's trace file.
pub fn trace_file_name(record_id: &str) -> String {
    let stem: String = record_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    format!("{stem}.jsonl")
}

fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    fs::write(path, contents)?;
    Ok(())
}

/// Writes `results.jsonl`, `traces/<id>.jsonl`, `report_<group>.{csv,md}` and
/// `summary.json` under `out_dir`.
pub fn write_outputs(out_dir: &Path, report: &BatchReport) -> Result<BatchSummary, PipelineError> {
    fs::create_dir_all(out_dir.join("traces"))?;

    let mut results = BufWriter::new(fs::File::create(out_dir.join("results.jsonl"))?);
    for r in report.results() {
        serde_json::to_writer(&mut results, r)?;
        results.write_all(b"\n")?;
    }
    results.flush()?;

    for o in &report.outcomes {
        if let Some(trace) = &o.trace {
            let f = BufWriter::new(fs::File::create(out_dir.join("traces").join(trace_file_name(&o.record_id)))?);
            write_trace(f, &o.record_id, trace)?;
        }
    }

    let all: Vec<MethodResult> = report.results().cloned().collect();
    for by in GroupBy::ALL {
        let rows = aggregate(&all, by);
        write_file(&out_dir.join(format!("report_{}.csv", by.as_str())), &render_csv(&rows, by))?;
        write_file(&out_dir.join(format!("report_{}.md", by.as_str())), &render_markdown(&rows, by))?;
    }

    let summary = report.summary();
    write_file(&out_dir.join("summary.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_names_are_flat() {
        assert_eq!(trace_file_name("a/b c"), "a_b_c.jsonl");
        assert_eq!(trace_file_name("r-01.x"), "r-01.x.jsonl");
    }
}
