//! Rollout storage and actor plumbing shared by the PPO families.

use rand_chacha::ChaCha8Rng;

use super::AgentError;
use crate::env::{Observation, OBS_DIM};
use crate::nn::{
    gae, standardize, Adam, GaussianPolicy, Mlp, PolicyBatch, PpoConfig, HIDDEN_GAIN,
    POLICY_OUTPUT_GAIN,
};
use crate::seed;

/// One firm's experience over an episode. `values` and `bootstrap` are
/// filled in at update time from whichever critic the family uses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub owner: usize,
    pub obs: Vec<[f64; OBS_DIM]>,
    /// Raw Gaussian samples (before clamping to `[-1, 1]`).
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// Rewards divided by the family's reward scale.
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub bootstrap: f64,
}

impl Trajectory {
    pub fn new(owner: usize) -> Self {
        Self {
            owner,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn clear(&mut self) {
        let owner = self.owner;
        *self = Self::new(owner);
    }

    /// Advantages (standardized) and value targets from `values` and
    /// `bootstrap`.
    pub fn policy_batch(&self, cfg: &PpoConfig) -> (PolicyBatch, Vec<f64>) {
        assert_eq!(self.values.len(), self.len(), "values not filled in");
        assert_eq!(self.rewards.len(), self.len(), "missing rewards");
        let (mut adv, returns) = gae(
            &self.rewards,
            &self.values,
            self.bootstrap,
            cfg.gamma,
            cfg.lambda,
        );
        standardize(&mut adv);
        let batch = PolicyBatch {
            obs: self.obs.iter().map(|o| o.to_vec()).collect(),
            actions: self.actions.clone(),
            old_log_probs: self.log_probs.clone(),
            advantages: adv,
        };
        (batch, returns)
    }
}

/// A decentralized actor: Gaussian policy, its optimizer, its exploration
/// stream and its rollout buffer.
#[derive(Clone, Debug)]
pub(crate) struct Actor {
    pub policy: GaussianPolicy,
    pub opt: Adam,
    pub rng: ChaCha8Rng,
    pub traj: Trajectory,
}

impl Actor {
    /// Actor initialization depends only on `(seed, firm)`, so different
    /// families built from the same seed start from identical actors.
    pub fn new(firm: usize, cfg: &PpoConfig, seed: u64) -> Self {
        let tag = firm.to_string();
        let mut init = seed::stream(seed, &["actor", &tag]);
        let net = Mlp::orthogonal(&cfg.dims(OBS_DIM, 1), HIDDEN_GAIN, POLICY_OUTPUT_GAIN, &mut init);
        let opt = Adam::new(net.num_params() + 1, cfg.lr);
        Self {
            policy: GaussianPolicy::new(net, 0.0),
            opt,
            rng: seed::stream(seed, &["explore", &tag]),
            traj: Trajectory::new(firm),
        }
    }

    /// Samples (`explore`) or takes the mean action. With `record`, the raw
    /// sample and its log-density go into the rollout buffer. The returned
    /// action is clamped to `[-1, 1]`.
    pub fn act(&mut self, obs: &Observation, explore: bool, record: bool) -> Result<f64, AgentError> {
        let firm = self.traj.owner;
        let action = if explore {
            let (a, logp) = self.policy.sample(&obs.normalized, &mut self.rng)?;
            if record {
                self.traj.obs.push(obs.normalized);
                self.traj.actions.push(a);
                self.traj.log_probs.push(logp);
            }
            a
        } else {
            self.policy.mean(&obs.normalized)?
        };
        if !action.is_finite() {
            return Err(AgentError::NonFiniteAction(firm));
        }
        Ok(action.clamp(-1.0, 1.0))
    }
}

pub(crate) fn critic_net(input: usize, output: usize, cfg: &PpoConfig, seed: u64, label: &str) -> Mlp {
    let mut init = seed::stream(seed, &["critic", label]);
    Mlp::orthogonal(
        &cfg.dims(input, output),
        HIDDEN_GAIN,
        crate::nn::VALUE_OUTPUT_GAIN,
        &mut init,
    )
}
