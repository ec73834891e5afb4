//! Run configuration file.
//!
//! Minimal config:
//!
//! ```toml
//! vocabulary = "vocab.txt"
//!
//! [backend]
//! kind = "oracle"
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use renewal_core::gateway::EditParams;
use renewal_core::metrics::DEFAULT_EPSILON;
use renewal_core::optimizer::OptimizerConfig;
use renewal_core::pipeline::{PipelineSettings, RewardSetting};
use renewal_core::prompt::{validate_template, ScenarioId, ScenarioOverride, ScenarioTable, DEFAULT_TEMPLATE};

pub const CACHE_ENV: &str = "RENEWAL_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendConfig {
    Remote {
        url: String,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
    Oracle {
        /// TOML file with oracle parameters; defaults when absent.
        #[serde(default)]
        config: Option<PathBuf>,
    },
}

fn default_timeout() -> f64 {
    120.0
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    #[serde(flatten)]
    pub setting: RewardSetting,
    pub epsilon: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { setting: RewardSetting::Scenario, epsilon: DEFAULT_EPSILON }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub vocabulary: PathBuf,
    #[serde(default = "yes")]
    pub normalize: bool,
    pub backend: BackendConfig,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_template")]
    pub template: String,
    #[serde(default = "default_sw_k")]
    pub sw_k: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub edit: EditParams,
    #[serde(default)]
    pub scenarios: BTreeMap<ScenarioId, ScenarioOverride>,
}

fn yes() -> bool {
    true
}
fn one() -> usize {
    1
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_template() -> String {
    DEFAULT_TEMPLATE.to_string()
}
fn default_sw_k() -> usize {
    10
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Reads, validates and resolves paths. `RENEWAL_CACHE_DIR`, when set,
    /// replaces the configured cache directory.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg = Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        rebase(base, &mut cfg.vocabulary);
        rebase(base, &mut cfg.out);
        if let Some(m) = cfg.manifest.as_mut() {
            rebase(base, m);
        }
        if let Some(c) = cfg.cache_dir.as_mut() {
            rebase(base, c);
        }
        if let BackendConfig::Oracle { config: Some(c) } = &mut cfg.backend {
            rebase(base, c);
        }
        if let Some(dir) = std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()) {
            cfg.cache_dir = Some(PathBuf::from(dir));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.workers == 0 {
            return Err("workers must be >= 1".into());
        }
        if self.sw_k == 0 {
            return Err("sw_k must be >= 1".into());
        }
        if !self.vocabulary.is_file() {
            return Err(format!("vocabulary {} not found", self.vocabulary.display()));
        }
        if let BackendConfig::Oracle { config: Some(c) } = &self.backend {
            if !c.is_file() {
                return Err(format!("oracle config {} not found", c.display()));
            }
        }
        if let BackendConfig::Remote { timeout_secs, .. } = self.backend {
            if !(timeout_secs > 0.0) || !timeout_secs.is_finite() {
                return Err(format!("timeout_secs {timeout_secs} must be > 0"));
            }
        }
        validate_template(&self.template).map_err(|e| e.to_string())?;
        self.optimizer.validate().map_err(|e| e.to_string())?;
        let settings = self.settings();
        for id in ScenarioId::ALL {
            let scenario = settings.scenarios.resolve(id, None).map_err(|e| e.to_string())?;
            settings.reward_spec(&scenario).map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    pub fn settings(&self) -> PipelineSettings {
        PipelineSettings {
            template: self.template.clone(),
            scenarios: ScenarioTable::with_overrides(self.scenarios.clone()),
            reward: self.reward.setting,
            epsilon: self.reward.epsilon,
            optimizer: self.optimizer.clone(),
            sw_k: self.sw_k,
            edit_params: self.edit,
            global_seed: self.seed,
        }
    }
}
