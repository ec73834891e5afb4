//! Deterministic synthetic evaluator.
//!
//! Scores are a per-record base plus an isotropic Gaussian bump centred on a
//! chosen optimum word `w*` in embedding space:
//!
//! ```text
//! score_m(record, w) = base_m(record) + A * exp(-|v(w) - v(w*)|^2 / (2 tau^2)) + noise
//! ```
//!
//! `base_m` is a stable hash of the record id mapped into `[base_low, base_high]`.
//! With `noise_sigma = 0` every score is a pure function of its inputs, and the
//! reward of any record is maximized exactly at `w*`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EditRequest, EvalContext, EvaluationResult, Evaluator, GatewayError};
use crate::embedding::{euclidean, EmbeddingVocabulary};
use crate::metrics::{reward, Metric, PerceptionScores, RewardSpec};
use crate::seeds::{derive_u64, unit_interval};

pub const ORACLE_MODEL_ID: &str = "synthetic-oracle";

/// Tunables of the synthetic landscape, as read from an oracle config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleParams {
    /// Chosen from the vocabulary with `rng_seed` when absent.
    pub optimum_word: Option<String>,
    pub amplitude: f64,
    pub bandwidth: f64,
    pub base_low: f64,
    pub base_high: f64,
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self {
            optimum_word: None,
            amplitude: 4.0,
            bandwidth: 0.35,
            base_low: 3.0,
            base_high: 6.0,
            noise_sigma: 0.0,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    vocab: Arc<EmbeddingVocabulary>,
    params: OracleParams,
    optimum: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub word: String,
    pub scores: PerceptionScores,
    pub reward: f64,
}

impl SyntheticOracle {
    pub fn new(vocab: Arc<EmbeddingVocabulary>, params: OracleParams) -> Result<Self, GatewayError> {
        let cfg = |m: String| Err(GatewayError::OracleConfig(m));
        if !vocab.is_normalized() {
            return cfg("oracle vocabulary must be unit-normalized".into());
        }
        if vocab.is_empty() {
            return cfg("empty vocabulary".into());
        }
        if !(params.amplitude > 0.0) {
            return cfg(format!("amplitude {} must be > 0", params.amplitude));
        }
        if !(params.bandwidth > 0.0) {
            return cfg(format!("bandwidth {} must be > 0", params.bandwidth));
        }
        if !(params.base_low < params.base_high) {
            return cfg(format!("base_low {} must be < base_high {}", params.base_low, params.base_high));
        }
        if !(params.noise_sigma >= 0.0) {
            return cfg(format!("noise_sigma {} must be >= 0", params.noise_sigma));
        }
        let optimum = match &params.optimum_word {
            Some(w) => vocab
                .index_of(w)
                .ok_or_else(|| GatewayError::OracleConfig(format!("optimum word {w:?} not in vocabulary")))?,
            None => ChaCha8Rng::seed_from_u64(params.rng_seed).gen_range(0..vocab.len()),
        };
        Ok(Self { vocab, params, optimum })
    }

    pub fn params(&self) -> &OracleParams {
        &self.params
    }

    pub fn vocabulary(&self) -> &EmbeddingVocabulary {
        &self.vocab
    }

    pub fn optimum_word(&self) -> &str {
        self.vocab.word(self.optimum)
    }

    /// Base score of an unedited record.
    pub fn base(&self, record_id: &str, metric: Metric) -> f64 {
        let h = derive_u64(&[b"oracle-base", record_id.as_bytes(), metric.as_str().as_bytes()]);
        let p = &self.params;
        p.base_low + (p.base_high - p.base_low) * unit_interval(h)
    }

    pub fn base_scores(&self, record_id: &str) -> PerceptionScores {
        PerceptionScores::new(
            self.base(record_id, Metric::Safe),
            self.base(record_id, Metric::Beauty),
            self.base(record_id, Metric::Lively),
        )
    }

    /// Bump height for a trigger word, before noise.
    pub fn bonus(&self, trigger: &str) -> Result<f64, GatewayError> {
        let v = self
            .vocab
            .vector(trigger)
            .ok_or_else(|| GatewayError::UnknownTrigger(trigger.to_string()))?;
        let d = euclidean(v, self.vocab.vector_at(self.optimum));
        let tau = self.params.bandwidth;
        Ok(self.params.amplitude * (-(d * d) / (2.0 * tau * tau)).exp())
    }

    fn noise(&self, record_id: &str, trigger: &str, metric: Metric) -> f64 {
        if self.params.noise_sigma == 0.0 {
            return 0.0;
        }
        let canonical = self.vocab.canonical(trigger).unwrap_or(trigger);
        let seed = derive_u64(&[
            b"oracle-noise",
            &self.params.rng_seed.to_be_bytes(),
            record_id.as_bytes(),
            canonical.as_bytes(),
            metric.as_str().as_bytes(),
        ]);
        let normal = Normal::new(0.0, self.params.noise_sigma).expect("sigma validated");
        normal.sample(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn synthetic_score(&self, record_id: &str, trigger: &str, metric: Metric) -> Result<f64, GatewayError> {
        Ok(self.base(record_id, metric) + self.bonus(trigger)? + self.noise(record_id, trigger, metric))
    }

    pub fn edited_scores(&self, record_id: &str, trigger: &str) -> Result<PerceptionScores, GatewayError> {
        Ok(PerceptionScores::new(
            self.synthetic_score(record_id, trigger, Metric::Safe)?,
            self.synthetic_score(record_id, trigger, Metric::Beauty)?,
            self.synthetic_score(record_id, trigger, Metric::Lively)?,
        ))
    }

    /// Exhaustive evaluation of every vocabulary word for one record, in
    /// vocabulary order.
    pub fn scan(&self, record_id: &str, spec: &RewardSpec) -> Result<Vec<ScanRow>, GatewayError> {
        let raw = self.base_scores(record_id);
        self.vocab
            .words()
            .iter()
            .map(|w| {
                let scores = self.edited_scores(record_id, w)?;
                let reward = reward(&raw, &scores, spec)?;
                Ok(ScanRow { word: w.clone(), scores, reward })
            })
            .collect()
    }
}

/// First row with the highest reward.
pub fn scan_argmax(rows: &[ScanRow]) -> Option<&ScanRow> {
    rows.iter().fold(None, |best: Option<&ScanRow>, r| match best {
        Some(b) if b.reward >= r.reward => Some(b),
        _ => Some(r),
    })
}

impl Evaluator for SyntheticOracle {
    fn edit_and_score(&self, request: &EditRequest, ctx: &EvalContext) -> Result<EvaluationResult, GatewayError> {
        let trigger = ctx.trigger.as_deref().ok_or(GatewayError::MissingTrigger)?;
        Ok(EvaluationResult {
            edited_image: request.image.clone(),
            scores: self.edited_scores(&ctx.record_id, trigger)?,
            model_id: ORACLE_MODEL_ID.to_string(),
            cache_hit: false,
        })
    }

    fn score_raw(&self, _image: &[u8], ctx: &EvalContext) -> Result<PerceptionScores, GatewayError> {
        Ok(self.base_scores(&ctx.record_id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_circle_vocab(n: usize) -> Arc<EmbeddingVocabulary> {
        let entries = (0..n).map(|i| {
            let t = i as f64 * std::f64::consts::TAU / n as f64;
            (format!("w{i:03}"), vec![t.cos(), t.sin()])
        });
        Arc::new(EmbeddingVocabulary::from_entries(entries, true).unwrap())
    }

    fn oracle(n: usize, optimum: &str) -> SyntheticOracle {
        let params = OracleParams { optimum_word: Some(optimum.into()), ..Default::default() };
        SyntheticOracle::new(unit_circle_vocab(n), params).unwrap()
    }

    #[test]
    fn peak_is_base_plus_amplitude() {
        let o = oracle(16, "w003");
        for m in Metric::ALL {
            let s = o.synthetic_score("rec-1", "w003", m).unwrap();
            assert_eq!(s, o.base("rec-1", m) + 4.0);
        }
    }

    #[test]
    fn half_height_distance() {
        // a vocabulary with one word at exactly tau * sqrt(2 ln 2) from w*
        let tau: f64 = 0.35;
        let d = tau * (2.0 * std::f64::consts::LN_2).sqrt();
        // chord of length d on the unit circle subtends angle 2 asin(d/2)
        let theta = 2.0 * (d / 2.0).asin();
        let entries = vec![
            ("star".to_string(), vec![1.0, 0.0]),
            ("half".to_string(), vec![theta.cos(), theta.sin()]),
        ];
        let vocab = Arc::new(EmbeddingVocabulary::from_entries(entries, true).unwrap());
        let o = SyntheticOracle::new(
            vocab,
            OracleParams { optimum_word: Some("star".into()), ..Default::default() },
        )
        .unwrap();
        assert!((o.bonus("half").unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn antipodal_bonus_vanishes() {
        let o = oracle(2, "w000");
        // w001 is at angle pi: distance 2
        let b = o.bonus("w001").unwrap();
        assert!((b - 4.0 * (-2.0f64 / 0.1225).exp()).abs() < 1e-15);
        assert!(b < 1e-3);
    }

    #[test]
    fn bases_in_range_and_stable() {
        let o = oracle(4, "w000");
        for i in 0..200 {
            let id = format!("r{i}");
            let s = o.base_scores(&id);
            for v in s.as_array() {
                assert!((3.0..=6.0).contains(&v));
            }
            assert_eq!(s, o.base_scores(&id));
        }
    }

    #[test]
    fn argmax_is_optimum() {
        let o = oracle(500, "w321");
        let rows = o.scan("rec", &RewardSpec::single(Metric::Beauty)).unwrap();
        assert_eq!(rows.len(), 500);
        assert_eq!(scan_argmax(&rows).unwrap().word, "w321");
    }

    #[test]
    fn seeded_optimum_choice() {
        let v = unit_circle_vocab(50);
        let a = SyntheticOracle::new(v.clone(), OracleParams { rng_seed: 9, ..Default::default() }).unwrap();
        let b = SyntheticOracle::new(v, OracleParams { rng_seed: 9, ..Default::default() }).unwrap();
        assert_eq!(a.optimum_word(), b.optimum_word());
    }

    #[test]
    fn noise_is_keyed_and_reproducible() {
        let v = unit_circle_vocab(10);
        let params = OracleParams { optimum_word: Some("w000".into()), noise_sigma: 0.2, ..Default::default() };
        let o = SyntheticOracle::new(v, params).unwrap();
        let a = o.synthetic_score("r", "w001", Metric::Safe).unwrap();
        assert_eq!(a, o.synthetic_score("r", "W001", Metric::Safe).unwrap());
        assert_ne!(a, o.base("r", Metric::Safe) + o.bonus("w001").unwrap());
    }

    #[test]
    fn config_validation() {
        let v = unit_circle_vocab(3);
        let bad = [
            OracleParams { amplitude: 0.0, ..Default::default() },
            OracleParams { bandwidth: -1.0, ..Default::default() },
            OracleParams { base_low: 6.0, base_high: 3.0, ..Default::default() },
            OracleParams { optimum_word: Some("nope".into()), ..Default::default() },
        ];
        for p in bad {
            assert!(SyntheticOracle::new(v.clone(), p).is_err());
        }
        let raw = Arc::new(EmbeddingVocabulary::from_entries(vec![("a".into(), vec![2.0, 0.0])], false).unwrap());
        assert!(SyntheticOracle::new(raw, OracleParams::default()).is_err());
    }

    #[test]
    fn unknown_trigger_and_missing_context() {
        let o = oracle(4, "w000");
        assert!(matches!(o.bonus("zzz"), Err(GatewayError::UnknownTrigger(_))));
        let req = EditRequest {
            image: vec![],
            mask: vec![],
            prompt: "p".into(),
            seed: 0,
            params: Default::default(),
        };
        assert!(matches!(o.edit_and_score(&req, &EvalContext::new("r", None)), Err(GatewayError::MissingTrigger)));
    }
}
