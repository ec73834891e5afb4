//! Perception scores, improvement rates and the scalar reward.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Nominal range of the perception scorers.
pub const SCORE_MIN: f64 = 0.0;
pub const SCORE_MAX: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("previous score {previous} is not above epsilon {epsilon}")]
    UndefinedBaseline { previous: f64, epsilon: f64 },
    #[error("invalid reward spec: {0}")]
    InvalidSpec(String),
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
    #[error("non-finite score for {0}")]
    NonFinite(Metric),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Safe,
    Beauty,
    Lively,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Safe, Metric::Beauty, Metric::Lively];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Safe => "safe",
            Metric::Beauty => "beauty",
            Metric::Lively => "lively",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "safe" | "safety" => Ok(Metric::Safe),
            "beauty" | "beautiful" => Ok(Metric::Beauty),
            "lively" | "liveliness" => Ok(Metric::Lively),
            _ => Err(MetricsError::UnknownMetric(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerceptionScores {
    pub safe: f64,
    pub beauty: f64,
    pub lively: f64,
}

impl PerceptionScores {
    pub fn new(safe: f64, beauty: f64, lively: f64) -> Self {
        Self { safe, beauty, lively }
    }

    pub fn uniform(v: f64) -> Self {
        Self::new(v, v, v)
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Safe => self.safe,
            Metric::Beauty => self.beauty,
            Metric::Lively => self.lively,
        }
    }

    pub fn set(&mut self, metric: Metric, value: f64) {
        match metric {
            Metric::Safe => self.safe = value,
            Metric::Beauty => self.beauty = value,
            Metric::Lively => self.lively = value,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.safe, self.beauty, self.lively]
    }

    /// Rejects non-finite scores and warns about out-of-range ones. Values are
    /// never altered here.
    pub fn validate(&self) -> Result<(), MetricsError> {
        for m in Metric::ALL {
            let v = self.get(m);
            if !v.is_finite() {
                return Err(MetricsError::NonFinite(m));
            }
            if !(SCORE_MIN..=SCORE_MAX).contains(&v) {
                log::warn!("{m} score {v} outside [{SCORE_MIN}, {SCORE_MAX}]");
            }
        }
        Ok(())
    }

    /// Copy clamped into the nominal range, for display only.
    pub fn clamped_for_report(&self) -> Self {
        Self::new(
            self.safe.clamp(SCORE_MIN, SCORE_MAX),
            self.beauty.clamp(SCORE_MIN, SCORE_MAX),
            self.lively.clamp(SCORE_MIN, SCORE_MAX),
        )
    }
}

/// `(renewal - previous) / previous`.
pub fn improvement_rate_eps(previous: f64, renewal: f64, epsilon: f64) -> Result<f64, MetricsError> {
    if !(previous > epsilon) {
        return Err(MetricsError::UndefinedBaseline { previous, epsilon });
    }
    Ok((renewal - previous) / previous)
}

pub fn improvement_rate(previous: f64, renewal: f64) -> Result<f64, MetricsError> {
    improvement_rate_eps(previous, renewal, DEFAULT_EPSILON)
}

/// Per-metric improvement rates `[safe, beauty, lively]`.
pub fn improvement_rates(
    raw: &PerceptionScores,
    edited: &PerceptionScores,
    epsilon: f64,
) -> Result<[f64; 3], MetricsError> {
    let mut out = [0.0; 3];
    for (i, m) in Metric::ALL.into_iter().enumerate() {
        out[i] = improvement_rate_eps(raw.get(m), edited.get(m), epsilon)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum RewardMode {
    Single { objective: Metric },
    /// Weights in `[safe, beauty, lively]` order.
    Weighted { weights: [f64; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    #[serde(flatten)]
    pub mode: RewardMode,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl RewardSpec {
    pub fn single(objective: Metric) -> Self {
        Self { mode: RewardMode::Single { objective }, epsilon: DEFAULT_EPSILON }
    }

    pub fn weighted(weights: [f64; 3]) -> Result<Self, MetricsError> {
        let spec = Self { mode: RewardMode::Weighted { weights }, epsilon: DEFAULT_EPSILON };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.epsilon > 0.0) {
            return Err(MetricsError::InvalidSpec(format!("epsilon {} must be > 0", self.epsilon)));
        }
        if let RewardMode::Weighted { weights } = self.mode {
            if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
                return Err(MetricsError::InvalidSpec("weights must be non-negative".into()));
            }
            let sum: f64 = weights.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(MetricsError::InvalidSpec(format!("weights sum to {sum}, expected 1")));
            }
        }
        Ok(())
    }
}

/// Scalar reward for an edit: the focal metric's improvement rate, or a
/// weighted sum of per-metric rates.
pub fn reward(
    raw: &PerceptionScores,
    edited: &PerceptionScores,
    spec: &RewardSpec,
) -> Result<f64, MetricsError> {
    match spec.mode {
        RewardMode::Single { objective } => {
            improvement_rate_eps(raw.get(objective), edited.get(objective), spec.epsilon)
        }
        RewardMode::Weighted { weights } => {
            let mut total = 0.0;
            for (m, w) in Metric::ALL.into_iter().zip(weights) {
                if w == 0.0 {
                    continue;
                }
                total += w * improvement_rate_eps(raw.get(m), edited.get(m), spec.epsilon)?;
            }
            Ok(total)
        }
    }
}
