use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;

use renewal_core::embedding::EmbeddingVocabulary;
use renewal_core::gateway::{
    scan_argmax, CachedBackend, Evaluator, GatewayError, OracleParams, RemoteBackend, RetryPolicy, SyntheticOracle,
};
use renewal_core::metrics::{improvement_rates, PerceptionScores};
use renewal_core::optimizer::{optimize, write_trace, EditSession, OptimizeError};
use renewal_core::pipeline::{
    aggregate, ingest_manifest, render_csv, render_markdown, run_batch, trace_file_name, write_outputs, GroupBy,
    Manifest, MethodResult, StreetViewRecord,
};
use renewal_core::seeds::record_seed;

use crate::config::{BackendConfig, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    BackendUnreachable,
    InvalidInput,
    AllFailed,
    Refused,
    Io,
}

impl ErrorKind {
    fn code(self) -> u8 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::BackendUnreachable => 3,
            ErrorKind::InvalidInput => 4,
            ErrorKind::AllFailed => 5,
            ErrorKind::Refused => 6,
            ErrorKind::Io => 1,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Config => "config",
            ErrorKind::BackendUnreachable => "backend_unreachable",
            ErrorKind::InvalidInput => "invalid_input",
            ErrorKind::AllFailed => "all_failed",
            ErrorKind::Refused => "refused",
            ErrorKind::Io => "io",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    kind: ErrorKind,
    message: String,
}

impl CliError {
    fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn code(&self) -> u8 {
        self.kind.code()
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": self.kind.as_str(),
            "exit_code": self.code(),
            "message": self.message,
        })
        .to_string()
    }
}

fn io_err(context: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::new(ErrorKind::Io, format!("{}: {e}", context.display()))
}

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    RunConfig::load(path).map_err(|m| CliError::new(ErrorKind::Config, m))
}

fn load_vocabulary(cfg: &RunConfig) -> Result<Arc<EmbeddingVocabulary>, CliError> {
    let vocab = EmbeddingVocabulary::load_path(&cfg.vocabulary, cfg.normalize)
        .map_err(|e| CliError::new(ErrorKind::Config, format!("vocabulary {}: {e}", cfg.vocabulary.display())))?;
    if vocab.duplicates_dropped() > 0 {
        log::warn!("{} case-folded duplicate words dropped from the vocabulary", vocab.duplicates_dropped());
    }
    Ok(Arc::new(vocab))
}

fn oracle_params(path: Option<&Path>) -> Result<OracleParams, CliError> {
    let Some(path) = path else {
        return Ok(OracleParams::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::new(ErrorKind::Config, format!("oracle config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::new(ErrorKind::Config, format!("oracle config {}: {e}", path.display())))
}

fn build_backend(cfg: &RunConfig, vocab: &Arc<EmbeddingVocabulary>) -> Result<Box<dyn Evaluator>, CliError> {
    let inner: Box<dyn Evaluator> = match &cfg.backend {
        BackendConfig::Remote { url, timeout_secs } => {
            let remote = RemoteBackend::new(url, Duration::from_secs_f64(*timeout_secs), RetryPolicy::default())
                .map_err(|e| CliError::new(ErrorKind::Config, format!("backend {url}: {e}")))?;
            remote
                .health()
                .map_err(|e| CliError::new(ErrorKind::BackendUnreachable, format!("backend {url}: {e}")))?;
            Box::new(remote)
        }
        BackendConfig::Oracle { config } => {
            let params = oracle_params(config.as_deref())?;
            let oracle = SyntheticOracle::new(Arc::clone(vocab), params)
                .map_err(|e| CliError::new(ErrorKind::Config, format!("oracle: {e}")))?;
            Box::new(oracle)
        }
    };
    match &cfg.cache_dir {
        Some(dir) => {
            let cached = CachedBackend::new(inner, dir)
                .map_err(|e| CliError::new(ErrorKind::Config, format!("cache {}: {e}", dir.display())))?;
            Ok(Box::new(cached))
        }
        None => Ok(inner),
    }
}

fn load_manifest(cfg: &RunConfig, flag: Option<PathBuf>) -> Result<Manifest, CliError> {
    let path = flag
        .or_else(|| cfg.manifest.clone())
        .ok_or_else(|| CliError::new(ErrorKind::Config, "no manifest given (--manifest or `manifest` in config)"))?;
    ingest_manifest(&path).map_err(|e| CliError::new(ErrorKind::InvalidInput, e.to_string()))
}

fn find_record<'a>(manifest: &'a Manifest, id: &str) -> Result<&'a StreetViewRecord, CliError> {
    if let Some(r) = manifest.find(id) {
        return Ok(r);
    }
    let reason = manifest
        .rejected
        .iter()
        .find(|r| r.id.as_deref() == Some(id))
        .map(|r| format!("record {id:?} rejected at line {}: {}", r.line, r.reason))
        .unwrap_or_else(|| format!("record {id:?} not in manifest"));
    Err(CliError::new(ErrorKind::InvalidInput, reason))
}

fn gateway_kind(e: &GatewayError) -> ErrorKind {
    if e.is_retryable() {
        ErrorKind::BackendUnreachable
    } else {
        ErrorKind::InvalidInput
    }
}

#[derive(Serialize)]
struct BestReport<'a> {
    record_id: &'a str,
    scenario: String,
    trigger: &'a str,
    prompt: &'a str,
    reward: f64,
    raw_scores: PerceptionScores,
    edited_scores: PerceptionScores,
    improvement_rates: [f64; 3],
    model_id: &'a str,
    evaluations: usize,
}

/// Optimizes the trigger word for one record. Writes
/// `traces/<id>.jsonl`, `best/<id>.json` and `best/<id>.png`.
pub fn run(config: &Path, manifest: Option<PathBuf>, record_id: &str, out: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let manifest = load_manifest(&cfg, manifest)?;
    let record = find_record(&manifest, record_id)?;
    let Some(disorder) = &record.disorder else {
        return Err(CliError::new(
            ErrorKind::InvalidInput,
            format!("record {record_id:?} has no detected disorder; nothing to edit"),
        ));
    };
    let vocab = load_vocabulary(&cfg)?;
    let backend = build_backend(&cfg, &vocab)?;
    let settings = cfg.settings().with_resolved_lengthscale(&vocab);

    let invalid = |e: String| CliError::new(ErrorKind::InvalidInput, e);
    let scenario = settings.scenarios.resolve(record.scenario, Some(disorder.factor)).map_err(|e| invalid(e.to_string()))?;
    let reward_spec = settings.reward_spec(&scenario).map_err(|e| CliError::new(ErrorKind::Config, e.to_string()))?;
    let image = fs::read(&record.image_path).map_err(io_err(&record.image_path))?;
    let mask = fs::read(&disorder.mask_path).map_err(io_err(&disorder.mask_path))?;

    let seed = record_seed(settings.global_seed, &record.id);
    let session = EditSession::new(
        &*backend,
        record.id.clone(),
        image,
        mask,
        scenario.target_word.clone(),
        settings.template.clone(),
        seed,
        settings.edit_params,
    );
    let mut opt = settings.optimizer.clone();
    opt.rng_seed = seed;
    let outcome = optimize(&session, &scenario, &vocab, &reward_spec, &opt).map_err(|e| match &e {
        OptimizeError::RawScores(g) => CliError::new(gateway_kind(g), e.to_string()),
        OptimizeError::AllEvaluationsFailed(_) => CliError::new(ErrorKind::AllFailed, e.to_string()),
        OptimizeError::Config(_) => CliError::new(ErrorKind::Config, e.to_string()),
        _ => invalid(e.to_string()),
    })?;

    let out = out.unwrap_or(cfg.out);
    let traces = out.join("traces");
    let best_dir = out.join("best");
    fs::create_dir_all(&traces).map_err(io_err(&traces))?;
    fs::create_dir_all(&best_dir).map_err(io_err(&best_dir))?;

    let trace_path = traces.join(trace_file_name(&record.id));
    let f = fs::File::create(&trace_path).map_err(io_err(&trace_path))?;
    write_trace(std::io::BufWriter::new(f), &record.id, &outcome.trace).map_err(io_err(&trace_path))?;

    let stem = trace_file_name(&record.id);
    let stem = stem.trim_end_matches(".jsonl");
    let rates = improvement_rates(&outcome.raw_scores, &outcome.best_result.scores, settings.epsilon)
        .map_err(|e| invalid(e.to_string()))?;
    let best = BestReport {
        record_id: &record.id,
        scenario: record.scenario.to_string(),
        trigger: &outcome.best_prompt.trigger,
        prompt: &outcome.best_prompt.rendered,
        reward: outcome.best_reward,
        raw_scores: outcome.raw_scores,
        edited_scores: outcome.best_result.scores,
        improvement_rates: rates,
        model_id: &outcome.best_result.model_id,
        evaluations: outcome.evaluations(),
    };
    let json = serde_json::to_string_pretty(&best).expect("serializable") + "\n";
    let best_json = best_dir.join(format!("{stem}.json"));
    fs::write(&best_json, &json).map_err(io_err(&best_json))?;
    let best_png = best_dir.join(format!("{stem}.png"));
    fs::write(&best_png, &outcome.best_result.edited_image).map_err(io_err(&best_png))?;
    print!("{json}");
    Ok(())
}

/// Runs every record. Exit 0 when at least one record succeeded or none
/// needed editing, 5 when every attempted record failed, 4 when the manifest
/// has no valid records.
pub fn batch(
    config: &Path,
    manifest: Option<PathBuf>,
    out: Option<PathBuf>,
    workers: Option<usize>,
) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let workers = workers.unwrap_or(cfg.workers);
    if workers == 0 {
        return Err(CliError::new(ErrorKind::Config, "--workers must be >= 1"));
    }
    let manifest = load_manifest(&cfg, manifest)?;
    if manifest.records.is_empty() {
        return Err(CliError::new(
            ErrorKind::InvalidInput,
            format!("manifest has no valid records ({} rejected)", manifest.rejected.len()),
        ));
    }
    let vocab = load_vocabulary(&cfg)?;
    let backend = build_backend(&cfg, &vocab)?;
    let report = run_batch(&manifest, &vocab, &*backend, &cfg.settings(), workers);

    let out = out.unwrap_or(cfg.out);
    let summary = write_outputs(&out, &report).map_err(|e| CliError::new(ErrorKind::Io, e.to_string()))?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
    if summary.failed > 0 && summary.processed == 0 {
        return Err(CliError::new(ErrorKind::AllFailed, format!("all {} attempted records failed", summary.failed)));
    }
    Ok(())
}

#[derive(Serialize)]
struct ArgmaxReport<'a> {
    record_id: &'a str,
    word: &'a str,
    reward: f64,
    scores: PerceptionScores,
    optimum_word: &'a str,
    rows: usize,
}

/// Exhaustive oracle scan. Writes `scan/<id>.csv` and `scan/<id>.argmax.json`.
pub fn oracle_scan(
    config: &Path,
    manifest: Option<PathBuf>,
    record_id: &str,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let BackendConfig::Oracle { config: oracle_cfg } = &cfg.backend else {
        return Err(CliError::new(ErrorKind::Refused, "oracle-scan refuses to run against a remote backend"));
    };
    let manifest = load_manifest(&cfg, manifest)?;
    let record = find_record(&manifest, record_id)?;
    let vocab = load_vocabulary(&cfg)?;
    let oracle = SyntheticOracle::new(Arc::clone(&vocab), oracle_params(oracle_cfg.as_deref())?)
        .map_err(|e| CliError::new(ErrorKind::Config, format!("oracle: {e}")))?;

    let settings = cfg.settings();
    let factor = record.disorder.as_ref().map(|d| d.factor);
    let scenario = settings
        .scenarios
        .resolve(record.scenario, factor)
        .map_err(|e| CliError::new(ErrorKind::InvalidInput, e.to_string()))?;
    let spec = settings.reward_spec(&scenario).map_err(|e| CliError::new(ErrorKind::Config, e.to_string()))?;
    let rows = oracle.scan(&record.id, &spec).map_err(|e| CliError::new(ErrorKind::InvalidInput, e.to_string()))?;
    let best = scan_argmax(&rows).ok_or_else(|| CliError::new(ErrorKind::InvalidInput, "empty vocabulary"))?;

    let mut csv = String::from("word,safe,beauty,lively,reward\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{},{}", r.word, r.scores.safe, r.scores.beauty, r.scores.lively, r.reward);
    }
    let dir = out.unwrap_or(cfg.out).join("scan");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let stem = trace_file_name(&record.id);
    let stem = stem.trim_end_matches(".jsonl");
    let csv_path = dir.join(format!("{stem}.csv"));
    fs::write(&csv_path, csv).map_err(io_err(&csv_path))?;
    let argmax = ArgmaxReport {
        record_id: &record.id,
        word: &best.word,
        reward: best.reward,
        scores: best.scores,
        optimum_word: oracle.optimum_word(),
        rows: rows.len(),
    };
    let json = serde_json::to_string_pretty(&argmax).expect("serializable") + "\n";
    let json_path = dir.join(format!("{stem}.argmax.json"));
    fs::write(&json_path, &json).map_err(io_err(&json_path))?;
    print!("{json}");
    Ok(())
}

/// Reads `results.jsonl` from `dir` and writes `report_<group>.{csv,md}`.
pub fn report(dir: &Path, group_by: Option<GroupBy>) -> Result<(), CliError> {
    let path = dir.join("results.jsonl");
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::new(ErrorKind::InvalidInput, format!("{}: {e}", path.display())))?;
    let mut results = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: MethodResult = serde_json::from_str(line)
            .map_err(|e| CliError::new(ErrorKind::InvalidInput, format!("{}:{}: {e}", path.display(), i + 1)))?;
        results.push(r);
    }
    if results.is_empty() {
        return Err(CliError::new(ErrorKind::InvalidInput, format!("{} has no results", path.display())));
    }
    let groups: Vec<GroupBy> = group_by.map_or_else(|| GroupBy::ALL.to_vec(), |g| vec![g]);
    for by in groups {
        let rows = aggregate(&results, by);
        let csv_path = dir.join(format!("report_{}.csv", by.as_str()));
        fs::write(&csv_path, render_csv(&rows, by)).map_err(io_err(&csv_path))?;
        let md = render_markdown(&rows, by);
        let md_path = dir.join(format!("report_{}.md", by.as_str()));
        fs::write(&md_path, &md).map_err(io_err(&md_path))?;
        println!("{md}");
    }
    Ok(())
}
