//! Prompt construction and the renewal-scenario table.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::Metric;

pub const DEFAULT_TEMPLATE: &str = "{tr} {ta} in a street";

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("template must contain {placeholder} exactly once (found {count})")]
    Placeholder {
        placeholder: &'static str,
        count: usize,
    },
    #[error("empty {0} token")]
    EmptyToken(&'static str),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("unknown disorder factor {0:?}")]
    UnknownFactor(String),
    #[error("scenario {scenario} cannot use source class {factor}")]
    FactorMismatch {
        scenario: ScenarioId,
        factor: DisorderFactor,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DisorderFactor {
    Building,
    Wall,
    Fence,
    Vegetation,
}

impl DisorderFactor {
    pub const ALL: [DisorderFactor; 4] = [Self::Building, Self::Wall, Self::Fence, Self::Vegetation];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Building => "Building",
            Self::Wall => "Wall",
            Self::Fence => "Fence",
            Self::Vegetation => "Vegetation",
        }
    }
}

impl fmt::Display for DisorderFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DisorderFactor {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| PromptError::UnknownFactor(s.to_string()))
    }
}

/// Urban-renewal scenario: neighborhood improvement, building redevelopment,
/// green space expansion, community gardens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioId {
    NI,
    BR,
    GSE,
    CG,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 4] = [Self::NI, Self::BR, Self::GSE, Self::CG];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::NI => "NI",
            Self::BR => "BR",
            Self::GSE => "GSE",
            Self::CG => "CG",
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioId {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|id| id.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| PromptError::UnknownScenario(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    pub source_class: DisorderFactor,
    pub target_word: String,
    pub objective_metric: Metric,
}

/// Per-scenario overrides read from the run configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioOverride {
    pub target_word: Option<String>,
    pub objective: Option<Metric>,
}

/// Scenario table with the default mappings plus any configured overrides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioTable {
    overrides: BTreeMap<ScenarioId, ScenarioOverride>,
}

impl ScenarioTable {
    pub fn with_overrides(overrides: BTreeMap<ScenarioId, ScenarioOverride>) -> Self {
        Self { overrides }
    }

    /// Resolves a scenario. `detected` is the factor reported for the record;
    /// NI needs it to decide between Wall and Fence (defaults to Wall).
    pub fn resolve(
        &self,
        id: ScenarioId,
        detected: Option<DisorderFactor>,
    ) -> Result<ScenarioSpec, PromptError> {
        let mut spec = scenario_mapping(id, detected)?;
        if let Some(o) = self.overrides.get(&id) {
            if let Some(word) = &o.target_word {
                if word.trim().is_empty() {
                    return Err(PromptError::EmptyToken("target"));
                }
                spec.target_word = word.clone();
            }
            if let Some(metric) = o.objective {
                spec.objective_metric = metric;
            }
        }
        Ok(spec)
    }
}

/// Default scenario table.
pub fn scenario_mapping(
    id: ScenarioId,
    detected: Option<DisorderFactor>,
) -> Result<ScenarioSpec, PromptError> {
    let (source_class, target_word, objective_metric) = match id {
        ScenarioId::NI => {
            let class = match detected {
                None | Some(DisorderFactor::Wall) => DisorderFactor::Wall,
                Some(DisorderFactor::Fence) => DisorderFactor::Fence,
                Some(factor) => return Err(PromptError::FactorMismatch { scenario: id, factor }),
            };
            (class, class.as_str(), Metric::Safe)
        }
        ScenarioId::BR => (DisorderFactor::Building, "Building", Metric::Lively),
        ScenarioId::GSE => (DisorderFactor::Vegetation, "Park", Metric::Beauty),
        ScenarioId::CG => (DisorderFactor::Vegetation, "Gardens", Metric::Beauty),
    };
    Ok(ScenarioSpec {
        id,
        source_class,
        target_word: target_word.to_string(),
        objective_metric,
    })
}

/// Trigger word used by the manual-prompt baseline.
pub fn manual_prompt_word(objective: Metric) -> &'static str {
    match objective {
        Metric::Safe => "Safe",
        Metric::Beauty => "Beautiful",
        Metric::Lively => "Lively",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub trigger: String,
    pub target: String,
    pub template: String,
    pub rendered: String,
}

fn check_placeholder(template: &str, placeholder: &'static str) -> Result<(), PromptError> {
    match template.matches(placeholder).count() {
        1 => Ok(()),
        count => Err(PromptError::Placeholder { placeholder, count }),
    }
}

/// Validates that `template` has each placeholder exactly once.
pub fn validate_template(template: &str) -> Result<(), PromptError> {
    check_placeholder(template, "{tr}")?;
    check_placeholder(template, "{ta}")
}

/// Substitutes trigger and target into `template`. Underscores inside tokens
/// render as spaces.
pub fn render_prompt(trigger: &str, target: &str, template: &str) -> Result<Prompt, PromptError> {
    validate_template(template)?;
    if trigger.trim().is_empty() {
        return Err(PromptError::EmptyToken("trigger"));
    }
    if target.trim().is_empty() {
        return Err(PromptError::EmptyToken("target"));
    }
    let tr = trigger.replace('_', " ");
    let ta = target.replace('_', " ");
    // split on {tr} first so a trigger containing "{ta}" is never re-substituted
    let (head, tail) = template.split_once("{tr}").expect("validated");
    let rendered = format!("{}{}{}", head.replace("{ta}", &ta), tr, tail.replace("{ta}", &ta));
    Ok(Prompt {
        trigger: trigger.to_string(),
        target: target.to_string(),
        template: template.to_string(),
        rendered,
    })
}
