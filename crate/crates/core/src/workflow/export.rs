//! Per-task output files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::runner::{RunOptions, RunResult};
use super::WorkflowError;
use crate::agents::llm::{constraint_stats, constraint_table, write_constraint_csv};
use crate::agents::AgentConfig;
use crate::scenario::{Algorithm, TaskSpec};

pub const TRAINING_STATS: &str = "training_stats.csv";
pub const FINAL_STRATEGY: &str = "final_strategy.csv";
pub const EVALUATION: &str = "evaluation.csv";
pub const TRAJECTORY: &str = "trajectory.csv";
pub const TRANSCRIPTS: &str = "transcripts.json";
pub const CONSTRAINT_STATS: &str = "constraint_stats.csv";
pub const RUN_META: &str = "run_meta.json";
pub const FAILED: &str = "FAILED";

/// `<out>/<batch>/<drug>/<algorithm>/<setting>`
pub fn task_dir(out: &Path, task: &TaskSpec) -> PathBuf {
    out.join(&task.batch_id)
        .join(&task.scenario_ref)
        .join(task.algorithm.as_str())
        .join(task.setting_label())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), WorkflowError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| WorkflowError::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| WorkflowError::csv(path, e))?;
    }
    w.flush().map_err(|e| WorkflowError::io(path, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), WorkflowError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| WorkflowError::Json(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| WorkflowError::io(path, e))
}

#[derive(Serialize)]
struct RunMeta<'a> {
    version: &'static str,
    label: String,
    task: &'a TaskSpec,
    seed: u64,
    scenario: &'a crate::scenario::DrugScenario,
    options: &'a RunOptions,
    #[serde(skip_serializing_if = "Option::is_none")]
    ppo: Option<&'a crate::nn::PpoConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    llm: Option<&'a crate::agents::LlmSettings>,
    training_episodes: usize,
    wall_seconds: f64,
}

/// Writes every output of a finished task into `dir` and clears a stale
/// failure marker.
pub fn write_task_outputs(
    dir: &Path,
    result: &RunResult,
    options: &RunOptions,
    agent_config: &AgentConfig,
) -> Result<(), WorkflowError> {
    fs::create_dir_all(dir).map_err(|e| WorkflowError::io(dir, e))?;
    write_csv(&dir.join(TRAINING_STATS), &result.training)?;
    write_csv(&dir.join(FINAL_STRATEGY), &result.final_strategy)?;
    write_csv(&dir.join(EVALUATION), &result.evaluation)?;
    if options.trajectory {
        write_csv(&dir.join(TRAJECTORY), &result.trajectory)?;
    }
    let algorithm = result.task.algorithm;
    if algorithm == Algorithm::Llm {
        write_json(&dir.join(TRANSCRIPTS), &result.transcripts)?;
        let rows = constraint_table(&[constraint_stats(&result.task.batch_id, &result.transcripts)]);
        let path = dir.join(CONSTRAINT_STATS);
        let file = fs::File::create(&path).map_err(|e| WorkflowError::io(&path, e))?;
        write_constraint_csv(file, &rows).map_err(|e| WorkflowError::csv(&path, e))?;
    }
    if !result.checkpoints.is_empty() {
        let ck = dir.join("checkpoints");
        fs::create_dir_all(&ck).map_err(|e| WorkflowError::io(&ck, e))?;
        for (name, c) in &result.checkpoints {
            let path = ck.join(format!("{name}.json"));
            c.save(&path)?;
        }
    }
    let rl = matches!(algorithm, Algorithm::Ippo | Algorithm::Mappo);
    write_json(
        &dir.join(RUN_META),
        &RunMeta {
            version: env!("CARGO_PKG_VERSION"),
            label: result.task.label(),
            task: &result.task,
            seed: result.task.seed,
            scenario: &result.scenario,
            options,
            ppo: rl.then_some(&agent_config.ppo),
            llm: (algorithm == Algorithm::Llm).then_some(&agent_config.llm),
            training_episodes: result.training.len(),
            wall_seconds: result.wall_seconds,
        },
    )?;
    let marker = dir.join(FAILED);
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| WorkflowError::io(&marker, e))?;
    }
    Ok(())
}

/// Leaves a `FAILED` marker holding the error message.
pub fn write_failure(dir: &Path, error: &dyn std::fmt::Display) -> Result<(), WorkflowError> {
    fs::create_dir_all(dir).map_err(|e| WorkflowError::io(dir, e))?;
    let marker = dir.join(FAILED);
    fs::write(&marker, format!("{error}\n")).map_err(|e| WorkflowError::io(&marker, e))
}
