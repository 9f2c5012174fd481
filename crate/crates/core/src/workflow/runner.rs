//! Training and evaluation loops for one task.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::WorkflowError;
use crate::agents::{build_agents, AgentConfig, AgentPolicy, DialogueRecord, Phase};
use crate::env::{clear_market_with_costs, profit, MarketEnv, StepOutcome};
use crate::nn::{Checkpoint, UpdateStats};
use crate::scenario::{DrugScenario, TaskSpec};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunOptions {
    pub eval_episodes: usize,
    /// Sample actions during evaluation instead of taking policy means.
    pub eval_explore: bool,
    /// Keep per-step training rows for `trajectory.csv`.
    pub trajectory: bool,
    pub checkpoints: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            eval_episodes: super::config::DEFAULT_EVAL_EPISODES,
            eval_explore: false,
            trajectory: false,
            checkpoints: false,
        }
    }
}

/// All steps of one episode.
#[derive(Clone, Debug, Default)]
pub struct EpisodeRecord {
    pub outcomes: Vec<StepOutcome>,
}

impl EpisodeRecord {
    /// Undiscounted return of every firm.
    pub fn returns(&self) -> Vec<f64> {
        let n = self.outcomes.first().map_or(0, |o| o.rewards.len());
        let mut r = vec![0.0; n];
        for o in &self.outcomes {
            r.iter_mut().zip(&o.rewards).for_each(|(a, b)| *a += b);
        }
        r
    }

    pub fn final_prices(&self) -> &[f64] {
        self.outcomes.last().map_or(&[], |o| &o.prices)
    }

    /// Mean of `price / p_max` over every winning bid of the episode.
    pub fn winner_bid_ratio(&self, p_max: f64) -> f64 {
        let (sum, n) = self
            .outcomes
            .iter()
            .flat_map(|o| o.winning_prices.iter())
            .fold((0.0, 0usize), |(s, n), p| (s + p / p_max, n + 1));
        if n == 0 {
            f64::NAN
        } else {
            sum / n as f64
        }
    }
}

/// Plays one episode: reset, then `T` simultaneous-move steps with every
/// outcome fed back to the agents.
pub fn run_episode(
    env: &mut MarketEnv,
    agents: &mut dyn AgentPolicy,
    episode: usize,
    phase: Phase,
    explore: bool,
) -> Result<EpisodeRecord, WorkflowError> {
    agents.begin_episode(episode, phase);
    let mut obs = env.reset();
    let mut record = EpisodeRecord::default();
    loop {
        let actions = agents.act(&obs, explore)?;
        let outcome = if agents.quotes_prices() {
            env.step_prices(&actions)?
        } else {
            env.step(&actions)?
        };
        agents.observe_outcome(&outcome)?;
        obs = outcome.next_obs.clone();
        let done = outcome.done;
        record.outcomes.push(outcome);
        if done {
            return Ok(record);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainingRow {
    pub episode: usize,
    /// Mean per-step reward over firms and steps.
    pub mean_reward: f64,
    /// Mean over firms of the episode's summed rewards.
    pub mean_return: f64,
    pub winner_bid_ratio: f64,
    pub mean_price: f64,
    pub policy_loss: Option<f64>,
    pub value_loss: Option<f64>,
    pub approx_kl: Option<f64>,
    pub entropy: Option<f64>,
    pub entropy_coef: Option<f64>,
    pub epochs_run: Option<usize>,
    pub stopped_early: Option<bool>,
}

impl TrainingRow {
    fn new(episode: usize, rec: &EpisodeRecord, p_max: f64, stats: Option<UpdateStats>) -> Self {
        let returns = rec.returns();
        let n = returns.len().max(1) as f64;
        let steps = rec.outcomes.len().max(1) as f64;
        let mean_return = returns.iter().sum::<f64>() / n;
        let mean_price = rec
            .outcomes
            .iter()
            .map(|o| o.prices.iter().sum::<f64>() / n)
            .sum::<f64>()
            / steps;
        Self {
            episode,
            mean_reward: mean_return / steps,
            mean_return,
            winner_bid_ratio: rec.winner_bid_ratio(p_max),
            mean_price,
            policy_loss: stats.map(|s| s.policy_loss),
            value_loss: stats.map(|s| s.value_loss),
            approx_kl: stats.map(|s| s.approx_kl),
            entropy: stats.map(|s| s.entropy),
            entropy_coef: stats.map(|s| s.entropy_coef),
            epochs_run: stats.map(|s| s.epochs_run),
            stopped_early: stats.map(|s| s.stopped_early),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalStrategyRow {
    pub firm_id: String,
    pub cost: f64,
    pub final_price: f64,
    pub bid_ceiling_ratio: f64,
    pub won: bool,
    pub profit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub eval_episode: usize,
    pub firm_id: String,
    pub final_price: f64,
    pub won: bool,
    pub profit: f64,
    pub episode_return: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub episode: usize,
    pub t: usize,
    pub firm_id: String,
    pub action: f64,
    pub price: f64,
    pub won: bool,
    pub profit: f64,
    pub reward: f64,
}

fn trajectory_rows(episode: usize, firm_ids: &[String], rec: &EpisodeRecord, out: &mut Vec<TrajectoryRow>) {
    for o in &rec.outcomes {
        for (i, id) in firm_ids.iter().enumerate() {
            out.push(TrajectoryRow {
                episode,
                t: o.t,
                firm_id: id.clone(),
                action: o.actions[i],
                price: o.prices[i],
                won: o.winners[i],
                profit: o.profits[i],
                reward: o.rewards[i],
            });
        }
    }
}

/// Everything a task produces.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub task: TaskSpec,
    /// The scenario as simulated: costs resolved, overrides applied.
    pub scenario: DrugScenario,
    pub training: Vec<TrainingRow>,
    pub final_strategy: Vec<FinalStrategyRow>,
    pub evaluation: Vec<EvalRow>,
    pub trajectory: Vec<TrajectoryRow>,
    pub transcripts: Vec<DialogueRecord>,
    pub checkpoints: Vec<(String, Checkpoint)>,
    pub wall_seconds: f64,
}

/// Runs one task end to end: `episodes` training episodes with an update
/// after each, then the evaluation episodes, whose final-step prices are
/// averaged per firm into the final strategy.
pub fn run_task(
    task: &TaskSpec,
    scenario: &DrugScenario,
    agent_config: &AgentConfig,
    options: &RunOptions,
) -> Result<RunResult, WorkflowError> {
    let start = Instant::now();
    task.validate()?;
    if scenario.drug_id != task.scenario_ref {
        return Err(WorkflowError::UnknownScenario(task.scenario_ref.clone()));
    }
    if options.eval_episodes == 0 {
        return Err(WorkflowError::Config("eval_episodes must be at least 1".into()));
    }
    let mut cost_rng = seed::stream(task.seed, &["costs"]);
    let scenario = scenario
        .resolve_costs(&mut cost_rng)
        .apply_overrides(&task.overrides)?;
    let mut env = MarketEnv::new(&scenario, task.timesteps)?;
    let mut agents = build_agents(task.algorithm, &scenario, &env, agent_config, task.seed)?;
    let firm_ids = env.firm_ids().to_vec();
    let p_max = env.market().p_max;

    let mut training = Vec::with_capacity(task.episodes);
    let mut trajectory = Vec::new();
    for ep in 0..task.episodes {
        let rec = run_episode(&mut env, agents.as_mut(), ep, Phase::Train, true)?;
        let progress = if task.episodes > 1 {
            ep as f64 / (task.episodes - 1) as f64
        } else {
            1.0
        };
        let stats = agents.end_episode_update(progress)?;
        if options.trajectory {
            trajectory_rows(ep + 1, &firm_ids, &rec, &mut trajectory);
        }
        training.push(TrainingRow::new(ep + 1, &rec, p_max, stats));
        if (ep + 1) % 100 == 0 {
            log::debug!("{}: episode {}/{}", task.label(), ep + 1, task.episodes);
        }
    }

    let n = env.num_firms();
    let mut sums = vec![0.0; n];
    let mut evaluation = Vec::with_capacity(options.eval_episodes * n);
    for k in 0..options.eval_episodes {
        let rec = run_episode(&mut env, agents.as_mut(), k, Phase::Eval, options.eval_explore)?;
        let last = rec.outcomes.last().expect("episodes have at least one step");
        let returns = rec.returns();
        for i in 0..n {
            sums[i] += last.prices[i];
            evaluation.push(EvalRow {
                eval_episode: k + 1,
                firm_id: firm_ids[i].clone(),
                final_price: last.prices[i],
                won: last.winners[i],
                profit: last.profits[i],
                episode_return: returns[i],
            });
        }
    }
    let finals: Vec<f64> = sums
        .iter()
        .map(|s| s / options.eval_episodes as f64)
        .collect();
    let costs: Vec<f64> = env.firms().iter().map(|f| f.cost).collect();
    let clearing = clear_market_with_costs(&finals, &costs, env.market().x);
    let final_strategy = (0..n)
        .map(|i| {
            let won = clearing.winners[i];
            FinalStrategyRow {
                firm_id: firm_ids[i].clone(),
                cost: costs[i],
                final_price: finals[i],
                bid_ceiling_ratio: finals[i] / p_max,
                won,
                profit: profit(finals[i], env.firm(i), env.market(), won),
            }
        })
        .collect();

    Ok(RunResult {
        task: task.clone(),
        scenario,
        training,
        final_strategy,
        evaluation,
        trajectory,
        transcripts: agents.transcripts().to_vec(),
        checkpoints: if options.checkpoints {
            agents.checkpoints()
        } else {
            Vec::new()
        },
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}
