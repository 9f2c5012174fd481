//! Simulation engine for volume-based drug procurement tenders: scenario
//! model, market environment, learning and scripted bidders, the
//! train/evaluate workflow and evaluation metrics.

pub mod agents;
pub mod env;
pub mod metrics;
pub mod nn;
pub mod scenario;
pub mod seed;
pub mod workflow;

pub use agents::{build_agents, AgentConfig, AgentError, AgentPolicy, Phase};
pub use env::{
    clear_market, decode_action, encode_price, profit, MarketEnv, Observation, StepOutcome,
    OBS_DIM,
};
pub use nn::{PpoConfig, UpdateStats};
pub use scenario::{
    load_scenarios, Algorithm, DrugScenario, FirmConfig, FirmType, OverrideTarget,
    SensitivityOverride, TaskSpec,
};
pub use workflow::{run_episode, run_task, RunConfig, RunOptions, RunResult, WorkflowError};
