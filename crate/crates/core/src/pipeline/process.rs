//! Per-record processing: manual prompt, similar-word and optimized methods.

use std::fmt;
use std::fs;

use serde::{Deserialize, Serialize};

use super::manifest::{MorphologyBucket, StreetViewRecord};
use super::PipelineError;
use crate::embedding::EmbeddingVocabulary;
use crate::gateway::{EditParams, Evaluator};
use crate::metrics::{self, improvement_rates, PerceptionScores, RewardMode, RewardSpec, DEFAULT_EPSILON};
use crate::optimizer::{
    optimize_with_raw, resolve_lengthscale, EditSession, LengthscaleMode, OptimizerConfig, TraceEntry,
};
use crate::prompt::{manual_prompt_word, ScenarioId, ScenarioSpec, ScenarioTable, DEFAULT_TEMPLATE};
use crate::seeds::record_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    MP,
    SW,
    BO,
    EXTERNAL,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::MP => "MP",
            Method::SW => "SW",
            Method::BO => "BO",
            Method::EXTERNAL => "EXTERNAL",
        })
    }
}

/// Per-metric values in `safe, beauty, lively` order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRates {
    pub safe: f64,
    pub beauty: f64,
    pub lively: f64,
}

impl From<[f64; 3]> for MetricRates {
    fn from(v: [f64; 3]) -> Self {
        Self { safe: v[0], beauty: v[1], lively: v[2] }
    }
}

impl MetricRates {
    pub fn as_array(&self) -> [f64; 3] {
        [self.safe, self.beauty, self.lively]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    /// Name of the external method; `None` for built-in methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub record_id: String,
    pub scenario: ScenarioId,
    pub hw_ratio: f64,
    pub morphology: MorphologyBucket,
    pub trigger: Option<String>,
    pub raw_scores: PerceptionScores,
    pub edited_scores: PerceptionScores,
    pub improvement_rates: MetricRates,
    pub reward: f64,
}

impl MethodResult {
    /// Display name: the external label for external methods.
    pub fn method_name(&self) -> String {
        match (&self.method, &self.label) {
            (Method::EXTERNAL, Some(l)) => l.clone(),
            (m, _) => m.to_string(),
        }
    }

    /// Stored rates agree with rates recomputed from the scores.
    pub fn rates_consistent(&self, epsilon: f64) -> bool {
        match improvement_rates(&self.raw_scores, &self.edited_scores, epsilon) {
            Ok(r) => r.iter().zip(self.improvement_rates.as_array()).all(|(a, b)| (a - b).abs() <= 1e-12),
            Err(_) => false,
        }
    }
}

/// How each record's reward is derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum RewardSetting {
    /// Improvement rate of the scenario's focal metric.
    Scenario,
    Weighted { weights: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSettings {
    pub template: String,
    pub scenarios: ScenarioTable,
    pub reward: RewardSetting,
    pub epsilon: f64,
    pub optimizer: OptimizerConfig,
    /// Neighbours of the manual-prompt word tried by the SW baseline.
    pub sw_k: usize,
    pub edit_params: EditParams,
    pub global_seed: u64,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            template: DEFAULT_TEMPLATE.to_string(),
            scenarios: ScenarioTable::default(),
            reward: RewardSetting::Scenario,
            epsilon: DEFAULT_EPSILON,
            optimizer: OptimizerConfig::default(),
            sw_k: 10,
            edit_params: EditParams::default(),
            global_seed: 0,
        }
    }
}

impl PipelineSettings {
    pub fn reward_spec(&self, scenario: &ScenarioSpec) -> Result<RewardSpec, PipelineError> {
        let mode = match self.reward {
            RewardSetting::Scenario => RewardMode::Single { objective: scenario.objective_metric },
            RewardSetting::Weighted { weights } => RewardMode::Weighted { weights },
        };
        let spec = RewardSpec { mode, epsilon: self.epsilon };
        spec.validate()?;
        Ok(spec)
    }

    /// Resolves the median-heuristic lengthscale once so every record in a
    /// batch reuses it.
    pub fn with_resolved_lengthscale(&self, vocab: &EmbeddingVocabulary) -> Self {
        let mut s = self.clone();
        if s.optimizer.lengthscale_mode == LengthscaleMode::MedianHeuristic {
            s.optimizer.lengthscale_mode = LengthscaleMode::Fixed(resolve_lengthscale(vocab, &s.optimizer));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordStatus {
    /// No disorder detected; nothing was edited.
    Skipped,
    Processed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodFailure {
    pub method: Method,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct RecordOutcome {
    pub record_id: String,
    pub status: RecordStatus,
    pub results: Vec<MethodResult>,
    pub failures: Vec<MethodFailure>,
    /// Optimizer trace, when the BO method ran.
    pub trace: Option<Vec<TraceEntry>>,
    pub best_prompt: Option<String>,
}

impl RecordOutcome {
    fn skipped(id: &str) -> Self {
        Self {
            record_id: id.to_string(),
            status: RecordStatus::Skipped,
            results: Vec::new(),
            failures: Vec::new(),
            trace: None,
            best_prompt: None,
        }
    }

    fn failed(id: &str, error: String) -> Self {
        let failures = [Method::MP, Method::SW, Method::BO]
            .into_iter()
            .map(|method| MethodFailure { method, error: error.clone() })
            .collect();
        Self { status: RecordStatus::Failed, failures, ..Self::skipped(id) }
    }
}

struct Scored {
    trigger: String,
    edited: PerceptionScores,
    reward: f64,
}

fn make_result(
    record: &StreetViewRecord,
    method: Method,
    label: Option<String>,
    trigger: Option<String>,
    raw: PerceptionScores,
    edited: PerceptionScores,
    reward: f64,
    epsilon: f64,
) -> Result<MethodResult, PipelineError> {
    Ok(MethodResult {
        method,
        label,
        record_id: record.id.clone(),
        scenario: record.scenario,
        hw_ratio: record.hw_ratio,
        morphology: record.morphology(),
        trigger,
        raw_scores: raw,
        edited_scores: edited,
        improvement_rates: improvement_rates(&raw, &edited, epsilon)?.into(),
        reward,
    })
}

/// Runs every method on one record. Records without detected disorder are
/// returned untouched with no evaluator calls. All methods share one raw-score
/// fetch, one edit seed, and a per-record memo of evaluated trigger words.
pub fn process_record<E: Evaluator + ?Sized>(
    record: &StreetViewRecord,
    vocab: &EmbeddingVocabulary,
    backend: &E,
    settings: &PipelineSettings,
) -> RecordOutcome {
    let Some(disorder) = &record.disorder else {
        return RecordOutcome::skipped(&record.id);
    };
    let setup = || -> Result<_, PipelineError> {
        let scenario = settings.scenarios.resolve(record.scenario, Some(disorder.factor))?;
        let reward_spec = settings.reward_spec(&scenario)?;
        let image = fs::read(&record.image_path)?;
        let mask = fs::read(&disorder.mask_path)?;
        Ok((scenario, reward_spec, image, mask))
    };
    let (scenario, reward_spec, image, mask) = match setup() {
        Ok(s) => s,
        Err(e) => return RecordOutcome::failed(&record.id, e.to_string()),
    };

    let seed = record_seed(settings.global_seed, &record.id);
    let session = EditSession::new(
        backend,
        record.id.clone(),
        image,
        mask,
        scenario.target_word.clone(),
        settings.template.clone(),
        seed,
        settings.edit_params,
    );
    let raw = match session.raw_scores() {
        Ok(r) => r,
        Err(e) => return RecordOutcome::failed(&record.id, format!("raw scores: {e}")),
    };

    let score = |trigger: &str| -> Result<Scored, String> {
        let ev = session.evaluate(trigger).map_err(|e| e.to_string())?;
        let reward = metrics::reward(&raw, &ev.result.scores, &reward_spec).map_err(|e| e.to_string())?;
        Ok(Scored { trigger: trigger.to_string(), edited: ev.result.scores, reward })
    };

    let mut outcome = RecordOutcome { status: RecordStatus::Processed, ..RecordOutcome::skipped(&record.id) };
    let push = |outcome: &mut RecordOutcome, method: Method, scored: Result<Scored, String>| {
        let made = scored.and_then(|s| {
            make_result(record, method, None, Some(s.trigger), raw, s.edited, s.reward, settings.epsilon)
                .map_err(|e| e.to_string())
        });
        match made {
            Ok(r) => outcome.results.push(r),
            Err(error) => outcome.failures.push(MethodFailure { method, error }),
        }
    };

    // manual prompt
    let mp_word = vocab
        .canonical(manual_prompt_word(scenario.objective_metric))
        .unwrap_or(manual_prompt_word(scenario.objective_metric))
        .to_string();
    push(&mut outcome, Method::MP, score(&mp_word));

    // similar words: the manual word plus its nearest neighbours
    let sw = vocab
        .nearest_neighbors(&mp_word, settings.sw_k.min(vocab.len().saturating_sub(1)).max(1), true)
        .map_err(|e| format!("similar words: {e}"))
        .and_then(|neighbors| {
            let candidates = std::iter::once(mp_word.clone()).chain(neighbors.into_iter().map(|n| n.word));
            let mut best: Option<Scored> = None;
            let mut last_err = None;
            for word in candidates {
                match score(&word) {
                    Ok(s) if best.as_ref().map_or(true, |b| s.reward > b.reward) => best = Some(s),
                    Ok(_) => {}
                    Err(e) => last_err = Some(e),
                }
            }
            best.ok_or_else(|| last_err.unwrap_or_else(|| "no candidates".into()))
        });
    push(&mut outcome, Method::SW, sw);

    // Bayesian optimization
    let mut config = settings.optimizer.clone();
    config.rng_seed = seed;
    match optimize_with_raw(&session, raw, &scenario, vocab, &reward_spec, &config) {
        Ok(run) => {
            let trigger = run.best_prompt.trigger.clone();
            outcome.best_prompt = Some(run.best_prompt.rendered.clone());
            match make_result(
                record,
                Method::BO,
                None,
                Some(trigger),
                raw,
                run.best_result.scores,
                run.best_reward,
                settings.epsilon,
            ) {
                Ok(r) => outcome.results.push(r),
                Err(e) => outcome.failures.push(MethodFailure { method: Method::BO, error: e.to_string() }),
            }
            outcome.trace = Some(run.trace);
        }
        Err(e) => outcome.failures.push(MethodFailure { method: Method::BO, error: e.to_string() }),
    }

    for ext in &record.external_results {
        let ext_raw = ext.raw_scores.unwrap_or(raw);
        let result = metrics::reward(&ext_raw, &ext.edited_scores, &reward_spec)
            .map_err(PipelineError::from)
            .and_then(|reward| {
                make_result(
                    record,
                    Method::EXTERNAL,
                    Some(ext.method.clone()),
                    ext.trigger.clone(),
                    ext_raw,
                    ext.edited_scores,
                    reward,
                    settings.epsilon,
                )
            });
        match result {
            Ok(r) => outcome.results.push(r),
            Err(e) => outcome.failures.push(MethodFailure { method: Method::EXTERNAL, error: e.to_string() }),
        }
    }

    if outcome.results.is_empty() {
        outcome.status = RecordStatus::Failed;
    }
    outcome
}
