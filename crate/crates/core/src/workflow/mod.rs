//! Task sets, the per-task train/evaluate loop, batch execution on a worker
//! pool, and result export.

mod config;
mod export;
mod runner;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use thiserror::Error;

pub use config::{LlmConfig, RunConfig, SensitivityAxis, DEFAULT_EVAL_EPISODES};
pub use export::{
    task_dir, write_csv, write_failure, write_task_outputs, CONSTRAINT_STATS, EVALUATION, FAILED,
    FINAL_STRATEGY, RUN_META, TRAINING_STATS, TRAJECTORY, TRANSCRIPTS,
};
pub use runner::{
    run_episode, run_task, EpisodeRecord, EvalRow, FinalStrategyRow, RunOptions, RunResult,
    TrainingRow, TrajectoryRow,
};

use crate::agents::llm::{HttpTransport, MockTransport, TransportError};
use crate::agents::{AgentConfig, AgentError, ChatTransport};
use crate::env::EnvError;
use crate::nn::NnError;
use crate::scenario::{Algorithm, DrugScenario, ScenarioError, SensitivityOverride, TaskSpec};
use crate::seed;

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("JSON: {0}")]
    Json(String),
    #[error("worker pool: {0}")]
    Pool(String),
}

impl WorkflowError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        WorkflowError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    pub(crate) fn csv(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::io(path, e)
    }

    /// True for failures of the file system rather than of the simulation.
    pub fn is_io(&self) -> bool {
        matches!(self, WorkflowError::Io { .. })
            || matches!(self, WorkflowError::Scenario(ScenarioError::Io { .. }))
    }
}

/// Sensitivity settings of a config: one single-target override per
/// multiplier, or just the base setting when there is no axis.
pub fn sensitivity_settings(axes: &[SensitivityAxis]) -> Vec<Vec<SensitivityOverride>> {
    if axes.is_empty() {
        return vec![Vec::new()];
    }
    axes.iter()
        .flat_map(|a| {
            a.multipliers
                .iter()
                .map(move |&m| vec![SensitivityOverride::new(a.target, m)])
        })
        .collect()
}

/// Scenarios selected by the config's drug subset, in file order.
pub fn select_scenarios(
    config: &RunConfig,
    scenarios: &[DrugScenario],
) -> Result<Vec<DrugScenario>, WorkflowError> {
    if let Some(missing) = config
        .drugs
        .iter()
        .find(|d| !scenarios.iter().any(|s| &s.drug_id == *d))
    {
        return Err(WorkflowError::UnknownScenario(missing.clone()));
    }
    Ok(scenarios
        .iter()
        .filter(|s| config.drugs.is_empty() || config.drugs.contains(&s.drug_id))
        .cloned()
        .collect())
}

/// Derived seed of a task from the base seed and its coordinates.
pub fn task_seed(base: u64, batch: &str, drug: &str, algorithm: Algorithm, setting: &str) -> u64 {
    seed::derive_seed(base, &[batch, drug, algorithm.as_str(), setting])
}

/// Cartesian product of selected scenarios, algorithms and sensitivity
/// settings.
pub fn build_task_set(
    config: &RunConfig,
    scenarios: &[DrugScenario],
) -> Result<Vec<TaskSpec>, WorkflowError> {
    let selected = select_scenarios(config, scenarios)?;
    let settings = sensitivity_settings(&config.sensitivity);
    let mut tasks = Vec::with_capacity(selected.len() * config.algorithms.len() * settings.len());
    for s in &selected {
        for &algorithm in &config.algorithms {
            for overrides in &settings {
                let mut task = TaskSpec {
                    batch_id: config.batch_id.clone(),
                    scenario_ref: s.drug_id.clone(),
                    algorithm,
                    overrides: overrides.clone(),
                    episodes: config.episodes,
                    timesteps: config.timesteps,
                    seed: 0,
                };
                task.seed = task_seed(
                    config.seed,
                    &task.batch_id,
                    &task.scenario_ref,
                    algorithm,
                    &task.setting_label(),
                );
                task.validate()?;
                tasks.push(task);
            }
        }
    }
    Ok(tasks)
}

/// Samples missing costs once per drug so every algorithm and setting of a
/// batch faces the same firms.
pub fn resolve_batch_costs(base_seed: u64, batch: &str, scenarios: &[DrugScenario]) -> Vec<DrugScenario> {
    scenarios
        .iter()
        .map(|s| s.resolve_costs(&mut seed::stream(base_seed, &[batch, &s.drug_id, "costs"])))
        .collect()
}

pub fn run_options(config: &RunConfig) -> RunOptions {
    RunOptions {
        eval_episodes: config.eval_episodes,
        eval_explore: config.eval_explore,
        trajectory: config.trajectory,
        checkpoints: config.checkpoints,
    }
}

/// Builds the chat transport: the mock script when configured, the HTTP
/// client otherwise.
pub fn build_transport(llm: &LlmConfig) -> Result<Arc<dyn ChatTransport>, WorkflowError> {
    Ok(match &llm.mock_script {
        Some(path) => Arc::new(MockTransport::load(path)?),
        None => Arc::new(HttpTransport::from_env(
            &llm.endpoint,
            Duration::from_secs(llm.timeout_secs),
            llm.retries,
        )?),
    })
}

/// Agent configuration for a run; the transport is only built when an LLM
/// task is requested.
pub fn agent_config(config: &RunConfig) -> Result<AgentConfig, WorkflowError> {
    let transport = if config.algorithms.contains(&Algorithm::Llm) {
        Some(build_transport(&config.llm)?)
    } else {
        None
    };
    Ok(AgentConfig {
        ppo: config.ppo.clone(),
        llm: config.llm.settings(),
        transport,
    })
}

/// Outcome of one task of a batch.
#[derive(Debug)]
pub struct TaskReport {
    pub task: TaskSpec,
    pub dir: PathBuf,
    pub result: Result<TaskSummary, WorkflowError>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSummary {
    pub episodes: usize,
    pub wall_seconds: f64,
    pub final_strategy: Vec<FinalStrategyRow>,
}

/// Runs `tasks` on a pool of `workers` threads, writing each task's outputs
/// (or a `FAILED` marker) under `out`. Reports come back in task order.
pub fn run_tasks(
    tasks: &[TaskSpec],
    scenarios: &[DrugScenario],
    agent_config: &AgentConfig,
    options: &RunOptions,
    out: &Path,
    workers: usize,
) -> Result<Vec<TaskReport>, WorkflowError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| WorkflowError::Pool(e.to_string()))?;
    let run_one = |task: &TaskSpec| -> TaskReport {
        let dir = task_dir(out, task);
        let result = scenarios
            .iter()
            .find(|s| s.drug_id == task.scenario_ref)
            .ok_or_else(|| WorkflowError::UnknownScenario(task.scenario_ref.clone()))
            .and_then(|s| run_task(task, s, agent_config, options))
            .and_then(|r| {
                write_task_outputs(&dir, &r, options, agent_config)?;
                Ok(TaskSummary {
                    episodes: r.training.len(),
                    wall_seconds: r.wall_seconds,
                    final_strategy: r.final_strategy,
                })
            });
        match &result {
            Ok(s) => log::info!("{} done in {:.2}s", task.label(), s.wall_seconds),
            Err(e) => {
                log::error!("{} failed: {e}", task.label());
                if let Err(w) = write_failure(&dir, e) {
                    log::error!("could not write failure marker: {w}");
                }
            }
        }
        TaskReport {
            task: task.clone(),
            dir,
            result,
        }
    };
    Ok(pool.install(|| tasks.par_iter().map(run_one).collect()))
}

/// Loads the scenarios of `config`, builds its task set and runs it.
pub fn run_batch(config: &RunConfig) -> Result<Vec<TaskReport>, WorkflowError> {
    config.validate()?;
    let scenarios = crate::scenario::load_scenarios(&config.scenarios)?;
    let scenarios = resolve_batch_costs(config.seed, &config.batch_id, &scenarios);
    let tasks = build_task_set(config, &scenarios)?;
    let agents = agent_config(config)?;
    run_tasks(&tasks, &scenarios, &agents, &run_options(config), &config.out, config.workers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{FirmConfig, FirmType, OverrideTarget};

    fn scenario(id: &str) -> DrugScenario {
        DrugScenario {
            drug_id: id.into(),
            name: None,
            p_max: 1.0,
            rho: 0.6,
            x: 1,
            q0: 100.0,
            qe: 120.0,
            firms: (0..2)
                .map(|i| FirmConfig {
                    firm_id: format!("F{}", i + 1),
                    omega: 0.5,
                    firm_type: FirmType::C,
                    has_raw_material: false,
                    beta: None,
                    cost: None,
                })
                .collect(),
        }
    }

    fn config() -> RunConfig {
        RunConfig {
            algorithms: vec![Algorithm::Rule, Algorithm::Ippo],
            sensitivity: vec![SensitivityAxis {
                target: OverrideTarget::PMax,
                multipliers: vec![0.8, 1.0, 1.2],
            }],
            ..RunConfig::default()
        }
    }

    #[test]
    fn product_size_and_seeds() {
        let scenarios = [scenario("d1"), scenario("d2")];
        let tasks = build_task_set(&config(), &scenarios).unwrap();
        assert_eq!(tasks.len(), 12);
        let mut seeds: Vec<u64> = tasks.iter().map(|t| t.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 12);
        let again = build_task_set(&config(), &scenarios).unwrap();
        assert_eq!(tasks, again);
    }

    #[test]
    fn no_sensitivity_means_one_base_setting() {
        let cfg = RunConfig {
            sensitivity: Vec::new(),
            ..config()
        };
        let tasks = build_task_set(&cfg, &[scenario("d1")]).unwrap();
        assert_eq!(tasks.len(), 2);
        assert!(tasks.iter().all(|t| t.setting_label() == "base"));
    }

    #[test]
    fn unknown_drug_is_rejected() {
        let cfg = RunConfig {
            drugs: vec!["nope".into()],
            ..config()
        };
        assert!(matches!(
            build_task_set(&cfg, &[scenario("d1")]),
            Err(WorkflowError::UnknownScenario(d)) if d == "nope"
        ));
    }
}
