//! Agent families. Each family drives the whole roster of a lot through one
//! [`AgentPolicy`], so joint machinery (a centralized critic, barrier-joined
//! chat requests) stays inside the family.

pub mod ippo;
pub mod llm;
pub mod mappo;
pub mod rule;

mod rollout;

use std::sync::Arc;

use thiserror::Error;

use crate::env::{MarketEnv, Observation, StepOutcome};
use crate::nn::{Checkpoint, NnError, PpoConfig, UpdateStats};
use crate::scenario::{Algorithm, DrugScenario};

pub use ippo::IppoAgents;
pub use llm::{ChatTransport, DialogueRecord, LlmAgents, LlmSettings};
pub use mappo::MappoAgents;
pub use rollout::Trajectory;
pub use rule::{RuleAgent, RuleAgents};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Transport(#[from] llm::TransportError),
    #[error("expected {expected} firms, got {got}")]
    FirmCount { expected: usize, got: usize },
    #[error("critic input width {got} does not match {expected} (10 x firms)")]
    CriticWidth { expected: usize, got: usize },
    #[error("{0} requires a chat transport")]
    MissingTransport(Algorithm),
    #[error("policy produced a non-finite action for firm {0}")]
    NonFiniteAction(usize),
}

/// Whether an episode trains the agents or evaluates them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Eval => "eval",
        }
    }
}

/// Bidding policy for every firm of one lot.
pub trait AgentPolicy: Send {
    fn algorithm(&self) -> Algorithm;

    /// Clears per-episode state. Evaluation episodes must not record anything
    /// that a later update would consume.
    fn begin_episode(&mut self, episode: usize, phase: Phase);

    /// One action in `[-1, 1]` (before clamping) per firm, from each firm's
    /// own observation. `explore = false` is deterministic given the state.
    fn act(&mut self, obs: &[Observation], explore: bool) -> Result<Vec<f64>, AgentError>;

    /// True when [`act`](Self::act) quotes prices in currency units instead
    /// of normalized actions.
    fn quotes_prices(&self) -> bool {
        false
    }

    /// Delivers the clearing outcome of the step just acted on.
    fn observe_outcome(&mut self, outcome: &StepOutcome) -> Result<(), AgentError>;

    /// End-of-episode learning step. `progress` runs from 0 (first episode)
    /// to 1 (last) and drives schedules such as entropy annealing.
    fn end_episode_update(&mut self, progress: f64) -> Result<Option<UpdateStats>, AgentError>;

    /// Dialogue records collected so far (LLM agents only).
    fn transcripts(&self) -> &[DialogueRecord] {
        &[]
    }

    /// Named network snapshots (learning agents only).
    fn checkpoints(&self) -> Vec<(String, Checkpoint)> {
        Vec::new()
    }
}

/// Everything needed to build any agent family.
#[derive(Clone, Default)]
pub struct AgentConfig {
    pub ppo: PpoConfig,
    pub llm: LlmSettings,
    pub transport: Option<Arc<dyn ChatTransport>>,
}

/// Instantiates the agent family for a task on an environment built from
/// `scenario` (costs resolved).
pub fn build_agents(
    algorithm: Algorithm,
    scenario: &DrugScenario,
    env: &MarketEnv,
    config: &AgentConfig,
    seed: u64,
) -> Result<Box<dyn AgentPolicy>, AgentError> {
    let reward_scale = env.normalizer().profit_span();
    Ok(match algorithm {
        Algorithm::Rule => Box::new(RuleAgents::new(scenario)),
        Algorithm::Ippo => Box::new(IppoAgents::new(
            env.num_firms(),
            config.ppo.clone(),
            reward_scale,
            seed,
        )?),
        Algorithm::Mappo => Box::new(MappoAgents::new(
            env.num_firms(),
            PpoConfig {
                value_clip: true,
                ..config.ppo.clone()
            },
            reward_scale,
            seed,
        )?),
        Algorithm::Llm => {
            let transport = config
                .transport
                .clone()
                .ok_or(AgentError::MissingTransport(Algorithm::Llm))?;
            Box::new(LlmAgents::new(
                scenario,
                env.horizon(),
                config.llm.clone(),
                transport,
            ))
        }
    })
}

pub(crate) fn check_firms(expected: usize, got: usize) -> Result<(), AgentError> {
    if expected != got {
        Err(AgentError::FirmCount { expected, got })
    } else {
        Ok(())
    }
}
