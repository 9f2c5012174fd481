//! Small dense-network toolkit for the learning agents: MLPs with
//! hand-written backpropagation, Adam, a Gaussian policy head, GAE and the
//! PPO losses.

mod adam;
mod checkpoint;
mod gae;
mod mlp;
mod policy;
mod ppo;

use thiserror::Error;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use gae::{gae, standardize};
pub use mlp::{ForwardCache, Mlp};
pub use policy::{
    gaussian_entropy, gaussian_log_prob, GaussianPolicy, PolicyGrad, LOG_STD_MAX, LOG_STD_MIN,
};
pub use ppo::{
    approx_kl, policy_loss, ppo_update, update_policy, update_value, value_loss, PolicyBatch, PolicyLoss,
    PolicyUpdateStats, PpoConfig, UpdateStats, ValueBatch,
};

/// Output-layer gain for policy means; keeps initial actions near zero.
pub const POLICY_OUTPUT_GAIN: f64 = 0.01;
pub const VALUE_OUTPUT_GAIN: f64 = 1.0;
pub const HIDDEN_GAIN: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("invalid PPO config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
