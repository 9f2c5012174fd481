//! TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::WorkflowError;
use crate::agents::LlmSettings;
use crate::nn::PpoConfig;
use crate::scenario::{Algorithm, OverrideTarget};

pub const DEFAULT_EVAL_EPISODES: usize = 5;

/// One sensitivity axis: a target scaled by each multiplier in turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityAxis {
    pub target: OverrideTarget,
    pub multipliers: Vec<f64>,
}

/// Chat transport settings. Credentials are read from the environment only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub retries: usize,
    /// Replay this mock script instead of calling the endpoint.
    pub mock_script: Option<PathBuf>,
}

impl LlmConfig {
    pub fn settings(&self) -> LlmSettings {
        LlmSettings {
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            ..LlmSettings::default()
        }
    }
}

impl Default for LlmConfig {
    fn default() -> Self {
        let d = LlmSettings::default();
        Self {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model: d.model,
            temperature: d.temperature,
            max_tokens: d.max_tokens,
            timeout_secs: 60,
            retries: 3,
            mock_script: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub batch_id: String,
    /// Scenario file; relative paths resolve against the config file.
    pub scenarios: PathBuf,
    /// Subset of drug ids to run; empty means all.
    pub drugs: Vec<String>,
    pub algorithms: Vec<Algorithm>,
    pub episodes: usize,
    pub timesteps: usize,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub eval_episodes: usize,
    pub eval_explore: bool,
    pub trajectory: bool,
    pub checkpoints: bool,
    pub sensitivity: Vec<SensitivityAxis>,
    pub llm: LlmConfig,
    pub ppo: PpoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            batch_id: "batch".into(),
            scenarios: PathBuf::from("scenarios.json"),
            drugs: Vec::new(),
            algorithms: vec![Algorithm::Rule],
            episodes: 1000,
            timesteps: 50,
            seed: 0,
            workers: 1,
            out: PathBuf::from("out"),
            eval_episodes: DEFAULT_EVAL_EPISODES,
            eval_explore: false,
            trajectory: false,
            checkpoints: false,
            sensitivity: Vec::new(),
            llm: LlmConfig::default(),
            ppo: PpoConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, WorkflowError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| WorkflowError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file and resolves relative scenario and mock-script
    /// paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, WorkflowError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| WorkflowError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| WorkflowError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.scenarios.is_relative() {
            cfg.scenarios = base.join(&cfg.scenarios);
        }
        if let Some(script) = &mut cfg.llm.mock_script {
            if script.is_relative() {
                *script = base.join(&*script);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), WorkflowError> {
        let fail = |m: String| Err(WorkflowError::Config(m));
        if self.batch_id.trim().is_empty() || self.batch_id.contains(['/', '\\']) {
            return fail(format!("invalid batch_id {:?}", self.batch_id));
        }
        if self.algorithms.is_empty() {
            return fail("no algorithms requested".into());
        }
        if self.episodes == 0 || self.timesteps == 0 {
            return fail("episodes and timesteps must be at least 1".into());
        }
        if self.workers == 0 {
            return fail("workers must be at least 1".into());
        }
        if self.eval_episodes == 0 {
            return fail("eval_episodes must be at least 1".into());
        }
        for axis in &self.sensitivity {
            if axis.multipliers.is_empty() {
                return fail(format!("sensitivity axis {} has no multipliers", axis.target));
            }
            if let Some(m) = axis.multipliers.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
                return fail(format!("multiplier {m} for {} must be positive", axis.target));
            }
        }
        self.ppo
            .validate()
            .map_err(|e| WorkflowError::Config(format!("ppo: {e}")))?;
        let s = &self.llm;
        if !(s.temperature >= 0.0) || s.max_tokens == 0 {
            return fail("llm temperature must be >= 0 and max_tokens >= 1".into());
        }
        Ok(())
    }
}
