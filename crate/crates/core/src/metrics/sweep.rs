//! Sensitivity sweeps: one task per (multiplier, seed), summarized as
//! plot-ready curves with 95% confidence intervals across seeds.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::stats::mean_ci95;
use crate::agents::AgentConfig;
use crate::scenario::{Algorithm, DrugScenario, OverrideTarget, SensitivityOverride, TaskSpec};
use crate::seed;
use crate::workflow::{run_task, write_csv, RunOptions, WorkflowError};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub batch_id: String,
    pub algorithm: Algorithm,
    pub target: OverrideTarget,
    pub multipliers: Vec<f64>,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub timesteps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub drug_id: String,
    pub algorithm: Algorithm,
    pub multiplier: f64,
    pub mean_price: f64,
    pub price_ci_lo: f64,
    pub price_ci_hi: f64,
    pub mean_profit: f64,
    pub profit_ci_lo: f64,
    pub profit_ci_hi: f64,
    pub seeds: usize,
}

/// Seeds `0..count` derived from a base seed.
pub fn sweep_seeds(base: u64, count: usize) -> Vec<u64> {
    (0..count)
        .map(|k| seed::derive_seed(base, &["sweep", &k.to_string()]))
        .collect()
}

/// Runs the sweep. Within one seed every multiplier sees the same sampled
/// costs and the same agent initialization, so curves differ only through
/// the scaled parameter. Rows come back in ascending multiplier order.
pub fn sweep(
    scenario: &DrugScenario,
    spec: &SweepSpec,
    agent_config: &AgentConfig,
    options: &RunOptions,
) -> Result<Vec<SweepRow>, WorkflowError> {
    if spec.multipliers.is_empty() {
        return Err(WorkflowError::Config("sweep needs at least one multiplier".into()));
    }
    if spec.seeds.is_empty() {
        return Err(WorkflowError::Config("sweep needs at least one seed".into()));
    }
    let mut multipliers = spec.multipliers.clone();
    multipliers.sort_by(f64::total_cmp);
    multipliers.dedup();

    let jobs: Vec<(usize, usize)> = (0..multipliers.len())
        .flat_map(|m| (0..spec.seeds.len()).map(move |s| (m, s)))
        .collect();
    let results: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(m, s)| {
            let base = spec.seeds[s];
            let resolved = scenario.resolve_costs(&mut seed::stream(base, &[&scenario.drug_id, "costs"]));
            let task = TaskSpec {
                batch_id: spec.batch_id.clone(),
                scenario_ref: scenario.drug_id.clone(),
                algorithm: spec.algorithm,
                overrides: vec![SensitivityOverride::new(spec.target, multipliers[m])],
                episodes: spec.episodes,
                timesteps: spec.timesteps,
                seed: seed::derive_seed(base, &[spec.algorithm.as_str()]),
            };
            let r = run_task(&task, &resolved, agent_config, options)?;
            let n = r.final_strategy.len() as f64;
            let price = r.final_strategy.iter().map(|f| f.final_price).sum::<f64>() / n;
            let profit = r.final_strategy.iter().map(|f| f.profit).sum::<f64>() / n;
            Ok((price, profit))
        })
        .collect::<Result<_, WorkflowError>>()?;

    let k = spec.seeds.len();
    Ok(multipliers
        .iter()
        .enumerate()
        .map(|(m, &mult)| {
            let chunk = &results[m * k..(m + 1) * k];
            let prices: Vec<f64> = chunk.iter().map(|r| r.0).collect();
            let profits: Vec<f64> = chunk.iter().map(|r| r.1).collect();
            let (mean_price, price_ci_lo, price_ci_hi) = mean_ci95(&prices);
            let (mean_profit, profit_ci_lo, profit_ci_hi) = mean_ci95(&profits);
            SweepRow {
                drug_id: scenario.drug_id.clone(),
                algorithm: spec.algorithm,
                multiplier: mult,
                mean_price,
                price_ci_lo,
                price_ci_hi,
                mean_profit,
                profit_ci_lo,
                profit_ci_hi,
                seeds: k,
            }
        })
        .collect())
}

/// Writes `sweep_<target>.csv` into `dir`.
pub fn write_sweep_csv(dir: &Path, target: OverrideTarget, rows: &[SweepRow]) -> Result<std::path::PathBuf, WorkflowError> {
    std::fs::create_dir_all(dir).map_err(|e| WorkflowError::Io {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })?;
    let path = dir.join(format!("sweep_{}.csv", target.as_str()));
    write_csv(&path, rows)?;
    Ok(path)
}
