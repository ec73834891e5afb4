//! Bayesian optimization of the trigger word.
//!
//! The search space is the vocabulary itself: each word is a point in
//! embedding space, a GP over those points models the reward, and the next
//! word is the unevaluated one with the highest Expected Improvement. The run
//! starts with the manual-prompt word plus `init_random` seeded random words,
//! then iterates until the evaluation budget is spent or `patience`
//! consecutive iterations fail to beat the best reward.

pub mod acquisition;
pub mod gp;

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{euclidean, EmbeddingVocabulary};
use crate::gateway::{self, EditParams, EditRequest, EvalContext, EvaluationResult, Evaluator, GatewayError};
use crate::metrics::{self, MetricsError, PerceptionScores, RewardSpec};
use crate::prompt::{manual_prompt_word, render_prompt, Prompt, PromptError, ScenarioSpec};
use crate::seeds::derive_u64;

pub use acquisition::expected_improvement;
pub use gp::{GpError, GpModel, GpParams, Prediction};

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("invalid optimizer config: {0}")]
    Config(String),
    #[error("vocabulary exhausted: every candidate word has been evaluated")]
    VocabularyExhausted,
    #[error("empty vocabulary")]
    EmptyVocabulary,
    #[error("raw-score evaluation failed: {0}")]
    RawScores(GatewayError),
    #[error("every evaluation failed ({0} attempted)")]
    AllEvaluationsFailed(usize),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthscaleMode {
    MedianHeuristic,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Total number of evaluations, initial design included.
    pub budget: usize,
    pub patience: usize,
    pub init_random: usize,
    pub xi: f64,
    pub noise: f64,
    pub lengthscale_mode: LengthscaleMode,
    pub signal_floor: f64,
    pub rng_seed: u64,
    /// Score only a seeded random subset of this many candidates per step.
    pub candidate_limit: Option<usize>,
    /// Record per-evaluation wall time in the trace. Off by default so traces
    /// are byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            budget: 30,
            patience: 10,
            init_random: 4,
            xi: 0.01,
            noise: 1e-6,
            lengthscale_mode: LengthscaleMode::MedianHeuristic,
            signal_floor: 1e-4,
            rng_seed: 0,
            candidate_limit: None,
            record_wall_time: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        let bad = |m: String| Err(OptimizeError::Config(m));
        if self.budget == 0 {
            return bad("budget must be positive".into());
        }
        if self.budget < self.init_random + 1 {
            return bad(format!("budget {} < init_random {} + 1", self.budget, self.init_random));
        }
        if self.patience == 0 {
            return bad("patience must be positive".into());
        }
        if !(self.xi >= 0.0) {
            return bad(format!("xi {} must be >= 0", self.xi));
        }
        if !(self.noise > 0.0) {
            return bad(format!("noise {} must be > 0", self.noise));
        }
        if !(self.signal_floor > 0.0) {
            return bad(format!("signal_floor {} must be > 0", self.signal_floor));
        }
        if let LengthscaleMode::Fixed(l) = self.lengthscale_mode {
            if !(l > 0.0) || !l.is_finite() {
                return bad(format!("lengthscale {l} must be > 0"));
            }
        }
        if self.candidate_limit == Some(0) {
            return bad("candidate_limit must be positive".into());
        }
        Ok(())
    }
}

/// Vocabulary sizes above this are subsampled (seeded) for the median heuristic.
pub const MEDIAN_HEURISTIC_SAMPLE: usize = 2048;

/// Median pairwise Euclidean distance among vocabulary vectors.
pub fn median_pairwise_distance(vocab: &EmbeddingVocabulary, seed: u64) -> f64 {
    let n = vocab.len();
    let idx: Vec<usize> = if n > MEDIAN_HEURISTIC_SAMPLE {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_u64(&[b"median-heuristic", &seed.to_be_bytes()]));
        let mut v = sample(&mut rng, n, MEDIAN_HEURISTIC_SAMPLE).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..n).collect()
    };
    let mut d = Vec::with_capacity(idx.len() * idx.len().saturating_sub(1) / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            d.push(euclidean(vocab.vector_at(i), vocab.vector_at(j)));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, upper, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    let median = if d.len() % 2 == 1 {
        upper
    } else {
        let lower = d[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

pub fn resolve_lengthscale(vocab: &EmbeddingVocabulary, config: &OptimizerConfig) -> f64 {
    match config.lengthscale_mode {
        LengthscaleMode::Fixed(l) => l,
        LengthscaleMode::MedianHeuristic => median_pairwise_distance(vocab, config.rng_seed),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Init,
    Bo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub phase: Phase,
    pub trigger: String,
    pub prompt: String,
    /// `None` when the evaluation failed.
    pub scores: Option<PerceptionScores>,
    /// Negative infinity when the evaluation failed.
    pub reward: f64,
    pub best_so_far: f64,
    pub error: Option<String>,
    pub wall_time_ms: Option<u64>,
}

impl TraceEntry {
    pub fn succeeded(&self) -> bool {
        self.scores.is_some()
    }
}

#[derive(Serialize)]
struct TraceLine<'a> {
    record_id: &'a str,
    iteration: usize,
    phase: Phase,
    trigger: &'a str,
    prompt: &'a str,
    scores: Option<PerceptionScores>,
    reward: Option<f64>,
    best_so_far: Option<f64>,
    error: Option<&'a str>,
    wall_time_ms: Option<u64>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// One JSON object per line. Non-finite rewards (failed evaluations, or no
/// success yet) are written as `null`.
pub fn write_trace<W: std::io::Write>(mut out: W, record_id: &str, trace: &[TraceEntry]) -> std::io::Result<()> {
    for e in trace {
        let line = TraceLine {
            record_id,
            iteration: e.iteration,
            phase: e.phase,
            trigger: &e.trigger,
            prompt: &e.prompt,
            scores: e.scores,
            reward: finite(e.reward),
            best_so_far: finite(e.best_so_far),
            error: e.error.as_deref(),
            wall_time_ms: e.wall_time_ms,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// A successful evaluation of one trigger word.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated {
    pub prompt: Prompt,
    pub result: EvaluationResult,
}

/// Everything needed to edit one record with different trigger words. Results
/// are memoized per trigger so baselines and the optimizer never pay twice
/// for the same word within a record.
pub struct EditSession<'a, E: ?Sized> {
    backend: &'a E,
    record_id: String,
    image: Vec<u8>,
    mask: Vec<u8>,
    target_word: String,
    template: String,
    seed: u64,
    params: EditParams,
    memo: RefCell<HashMap<String, Evaluated>>,
}

impl<'a, E: Evaluator + ?Sized> EditSession<'a, E> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        backend: &'a E,
        record_id: impl Into<String>,
        image: Vec<u8>,
        mask: Vec<u8>,
        target_word: impl Into<String>,
        template: impl Into<String>,
        seed: u64,
        params: EditParams,
    ) -> Self {
        Self {
            backend,
            record_id: record_id.into(),
            image,
            mask,
            target_word: target_word.into(),
            template: template.into(),
            seed,
            params,
            memo: RefCell::new(HashMap::new()),
        }
    }

    pub fn record_id(&self) -> &str {
        &self.record_id
    }

    pub fn prompt(&self, trigger: &str) -> Result<Prompt, PromptError> {
        render_prompt(trigger, &self.target_word, &self.template)
    }

    pub fn raw_scores(&self) -> Result<PerceptionScores, GatewayError> {
        gateway::score_raw(self.backend, &self.image, &EvalContext::new(&self.record_id, None))
    }

    pub fn evaluate(&self, trigger: &str) -> Result<Evaluated, GatewayError> {
        if let Some(hit) = self.memo.borrow().get(trigger) {
            return Ok(hit.clone());
        }
        let prompt = self
            .prompt(trigger)
            .map_err(|e| GatewayError::Protocol(format!("cannot render prompt: {e}")))?;
        let request = EditRequest {
            image: self.image.clone(),
            mask: self.mask.clone(),
            prompt: prompt.rendered.clone(),
            seed: self.seed,
            params: self.params,
        };
        let ctx = EvalContext::new(&self.record_id, Some(trigger));
        let result = gateway::edit_and_score(self.backend, &request, &ctx)?;
        let evaluated = Evaluated { prompt, result };
        self.memo.borrow_mut().insert(trigger.to_string(), evaluated.clone());
        Ok(evaluated)
    }
}

/// Best candidate by Expected Improvement among unevaluated words.
///
/// `model` and `best` must be in the same units. Ties go to the
/// lexicographically smallest word. With `candidate_limit` set, only a random
/// subset (seeded by `rng_seed` and `round`) is scored.
pub fn select_next(
    model: &GpModel,
    vocab: &EmbeddingVocabulary,
    evaluated: &HashSet<usize>,
    best: f64,
    config: &OptimizerConfig,
    round: usize,
) -> Result<usize, OptimizeError> {
    let mut pool: Vec<usize> = (0..vocab.len()).filter(|i| !evaluated.contains(i)).collect();
    if pool.is_empty() {
        return Err(OptimizeError::VocabularyExhausted);
    }
    if let Some(limit) = config.candidate_limit {
        if limit < pool.len() {
            let seed = derive_u64(&[b"candidates", &config.rng_seed.to_be_bytes(), &(round as u64).to_be_bytes()]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            pool = sample(&mut rng, pool.len(), limit).into_iter().map(|k| pool[k]).collect();
        }
    }
    let mut winner: Option<(f64, usize)> = None;
    for i in pool {
        let p = model.predict(vocab.vector_at(i))?;
        let ei = expected_improvement(p.mean, p.stddev, best, config.xi);
        let better = match winner {
            None => true,
            Some((w_ei, w)) => ei > w_ei || (ei == w_ei && vocab.word(i) < vocab.word(w)),
        };
        if better {
            winner = Some((ei, i));
        }
    }
    Ok(winner.expect("pool is non-empty").1)
}

#[derive(Debug, Clone)]
pub struct OptimizationOutcome {
    pub best_prompt: Prompt,
    pub best_reward: f64,
    pub best_result: EvaluationResult,
    pub raw_scores: PerceptionScores,
    pub trace: Vec<TraceEntry>,
}

impl OptimizationOutcome {
    pub fn evaluations(&self) -> usize {
        self.trace.len()
    }
}

/// Reward targets standardized to zero mean and unit variance. Constant
/// targets are only centred.
struct Standardizer {
    mean: f64,
    scale: f64,
}

impl Standardizer {
    fn new(y: &[f64]) -> Self {
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let var = gp::variance(y);
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        Self { mean, scale }
    }

    fn apply(&self, y: f64) -> f64 {
        (y - self.mean) / self.scale
    }
}

/// Runs the optimization loop for one record, fetching raw scores first.
pub fn optimize<E: Evaluator + ?Sized>(
    session: &EditSession<'_, E>,
    scenario: &ScenarioSpec,
    vocab: &EmbeddingVocabulary,
    reward_spec: &RewardSpec,
    config: &OptimizerConfig,
) -> Result<OptimizationOutcome, OptimizeError> {
    config.validate()?;
    let raw = session.raw_scores().map_err(OptimizeError::RawScores)?;
    optimize_with_raw(session, raw, scenario, vocab, reward_spec, config)
}

/// Optimization loop with raw scores supplied by the caller.
pub fn optimize_with_raw<E: Evaluator + ?Sized>(
    session: &EditSession<'_, E>,
    raw: PerceptionScores,
    scenario: &ScenarioSpec,
    vocab: &EmbeddingVocabulary,
    reward_spec: &RewardSpec,
    config: &OptimizerConfig,
) -> Result<OptimizationOutcome, OptimizeError> {
    config.validate()?;
    if vocab.is_empty() {
        return Err(OptimizeError::EmptyVocabulary);
    }
    session.prompt("x")?;

    let gp_params = GpParams {
        lengthscale: resolve_lengthscale(vocab, config),
        noise: config.noise,
        signal_floor: config.signal_floor,
    };

    let mut run = RunState {
        session,
        raw,
        reward_spec,
        config,
        vocab,
        evaluated: HashSet::new(),
        observed: Vec::new(),
        trace: Vec::new(),
        best: None,
    };

    // initial design: manual-prompt word (when in the vocabulary) plus seeded random words
    let mut init: Vec<usize> = Vec::new();
    let mp = manual_prompt_word(scenario.objective_metric);
    match vocab.index_of(mp) {
        Some(i) => init.push(i),
        None => log::info!("manual-prompt word {mp:?} not in vocabulary; skipped in initial design"),
    }
    let pool: Vec<usize> = (0..vocab.len()).filter(|i| !init.contains(i)).collect();
    let k = config.init_random.min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_u64(&[b"init", &config.rng_seed.to_be_bytes()]));
    init.extend(sample(&mut rng, pool.len(), k).into_iter().map(|j| pool[j]));
    init.truncate(config.budget);
    for idx in init {
        run.step(idx, Phase::Init);
    }

    let mut stale = 0;
    let mut round = 0;
    while run.trace.len() < config.budget && run.evaluated.len() < vocab.len() {
        round += 1;
        let next = if run.observed.is_empty() {
            // nothing to model yet: lexicographically first unevaluated word
            (0..vocab.len())
                .filter(|i| !run.evaluated.contains(i))
                .min_by(|&a, &b| vocab.word(a).cmp(vocab.word(b)))
                .expect("loop guard ensures a candidate")
        } else {
            let y: Vec<f64> = run.observed.iter().map(|o| o.1).collect();
            let std = Standardizer::new(&y);
            let z: Vec<f64> = y.iter().map(|&v| std.apply(v)).collect();
            let x: Vec<Vec<f64>> = run.observed.iter().map(|o| vocab.vector_at(o.0).to_vec()).collect();
            let model = GpModel::fit(x, &z, &gp_params)?;
            let best_z = std.apply(run.best.as_ref().expect("observed implies best").0);
            select_next(&model, vocab, &run.evaluated, best_z, config, round)?
        };
        if run.step(next, Phase::Bo) {
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }

    let attempted = run.trace.len();
    let (best_reward, ev) = run.best.ok_or(OptimizeError::AllEvaluationsFailed(attempted))?;
    Ok(OptimizationOutcome {
        best_prompt: ev.prompt,
        best_reward,
        best_result: ev.result,
        raw_scores: raw,
        trace: run.trace,
    })
}

struct RunState<'r, 's, E: ?Sized> {
    session: &'r EditSession<'s, E>,
    raw: PerceptionScores,
    reward_spec: &'r RewardSpec,
    config: &'r OptimizerConfig,
    vocab: &'r EmbeddingVocabulary,
    evaluated: HashSet<usize>,
    /// Successful evaluations only; failures never reach the surrogate.
    observed: Vec<(usize, f64)>,
    trace: Vec<TraceEntry>,
    best: Option<(f64, Evaluated)>,
}

impl<E: Evaluator + ?Sized> RunState<'_, '_, E> {
    /// Evaluates one word and appends it to the trace. Returns whether the
    /// best reward improved.
    fn step(&mut self, idx: usize, phase: Phase) -> bool {
        let trigger = self.vocab.word(idx).to_string();
        self.evaluated.insert(idx);
        let started = Instant::now();
        let outcome = self
            .session
            .evaluate(&trigger)
            .map_err(|e| e.to_string())
            .and_then(|ev| {
                metrics::reward(&self.raw, &ev.result.scores, self.reward_spec)
                    .map(|r| (r, ev))
                    .map_err(|e: MetricsError| e.to_string())
            });
        let wall_time_ms = self.config.record_wall_time.then(|| started.elapsed().as_millis() as u64);
        let prompt = self.session.prompt(&trigger).map(|p| p.rendered).unwrap_or_default();
        let prev_best = self.best.as_ref().map_or(f64::NEG_INFINITY, |b| b.0);
        let iteration = self.trace.len() + 1;

        let (entry, improved) = match outcome {
            Ok((reward, ev)) if reward.is_finite() => {
                self.observed.push((idx, reward));
                let scores = ev.result.scores;
                let improved = reward > prev_best;
                if improved {
                    self.best = Some((reward, ev));
                }
                let entry = TraceEntry {
                    iteration,
                    phase,
                    trigger,
                    prompt,
                    scores: Some(scores),
                    reward,
                    best_so_far: prev_best.max(reward),
                    error: None,
                    wall_time_ms,
                };
                (entry, improved)
            }
            failed => {
                let error = match failed {
                    Err(e) => e,
                    Ok((r, _)) => format!("non-finite reward {r}"),
                };
                log::warn!("record {}: evaluation of {trigger:?} failed: {error}", self.session.record_id());
                let entry = TraceEntry {
                    iteration,
                    phase,
                    trigger,
                    prompt,
                    scores: None,
                    reward: f64::NEG_INFINITY,
                    best_so_far: prev_best,
                    error: Some(error),
                    wall_time_ms,
                };
                (entry, false)
            }
        };
        self.trace.push(entry);
        improved
    }
}
