//! MAPPO: decentralized actors on local observations, one centralized critic
//! on the concatenated state of all firms with one value head per firm.

use rand_chacha::ChaCha8Rng;

use super::rollout::{critic_net, Actor, Trajectory};
use super::{check_firms, AgentError, AgentPolicy, Phase};
use crate::env::{global_state, Observation, StepOutcome, OBS_DIM};
use crate::nn::{
    policy_loss, update_policy, update_value, Adam, Checkpoint, GaussianPolicy, Mlp, PolicyGrad,
    PpoConfig, UpdateStats, ValueBatch,
};
use crate::scenario::Algorithm;
use crate::seed;

#[derive(Clone, Debug)]
pub struct MappoAgents {
    cfg: PpoConfig,
    reward_scale: f64,
    actors: Vec<Actor>,
    critic: Mlp,
    critic_opt: Adam,
    states: Vec<Vec<f64>>,
    update_rng: ChaCha8Rng,
    recording: bool,
}

impl MappoAgents {
    pub fn new(n: usize, cfg: PpoConfig, reward_scale: f64, seed: u64) -> Result<Self, AgentError> {
        let critic = critic_net(OBS_DIM * n, n, &cfg, seed, "central");
        Self::with_critic(n, cfg, reward_scale, seed, critic)
    }

    /// Uses a caller-supplied critic, which must take `10 * n` inputs and
    /// produce `n` values.
    pub fn with_critic(
        n: usize,
        cfg: PpoConfig,
        reward_scale: f64,
        seed: u64,
        critic: Mlp,
    ) -> Result<Self, AgentError> {
        cfg.validate()?;
        if critic.input_dim() != OBS_DIM * n {
            return Err(AgentError::CriticWidth {
                expected: OBS_DIM * n,
                got: critic.input_dim(),
            });
        }
        check_firms(n, critic.output_dim())?;
        Ok(Self {
            actors: (0..n).map(|i| Actor::new(i, &cfg, seed)).collect(),
            critic_opt: Adam::new(critic.num_params(), cfg.lr),
            critic,
            states: Vec::new(),
            update_rng: seed::stream(seed, &["update"]),
            reward_scale: if reward_scale > 0.0 { reward_scale } else { 1.0 },
            recording: false,
            cfg,
        })
    }

    pub fn num_firms(&self) -> usize {
        self.actors.len()
    }

    pub fn policy(&self, firm: usize) -> &GaussianPolicy {
        &self.actors[firm].policy
    }

    pub fn policy_mut(&mut self, firm: usize) -> &mut GaussianPolicy {
        &mut self.actors[firm].policy
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn critic_mut(&mut self) -> &mut Mlp {
        &mut self.critic
    }

    pub fn trajectory(&self, firm: usize) -> &Trajectory {
        &self.actors[firm].traj
    }

    /// Per-firm value estimates from the centralized critic for every
    /// recorded step.
    fn fill_values(&mut self) -> Result<(), AgentError> {
        let values: Vec<Vec<f64>> = self
            .states
            .iter()
            .map(|s| self.critic.forward(s))
            .collect::<Result<_, _>>()?;
        for (i, actor) in self.actors.iter_mut().enumerate() {
            actor.traj.values = values.iter().map(|v| v[i]).collect();
            actor.traj.bootstrap = 0.0;
        }
        Ok(())
    }

    /// Policy-loss gradient for `firm` on its current trajectory, with values
    /// from the centralized critic. Does not modify any parameters.
    pub fn actor_gradient(&mut self, firm: usize, entropy_coef: f64) -> Result<PolicyGrad, AgentError> {
        self.fill_values()?;
        let actor = &self.actors[firm];
        let (batch, _) = actor.traj.policy_batch(&self.cfg);
        let idx: Vec<usize> = (0..batch.len()).collect();
        let mut grad = PolicyGrad::zeros(&actor.policy);
        policy_loss(&actor.policy, &batch, &idx, self.cfg.clip, entropy_coef, Some(&mut grad))?;
        Ok(grad)
    }
}

impl AgentPolicy for MappoAgents {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Mappo
    }

    fn begin_episode(&mut self, _episode: usize, phase: Phase) {
        self.recording = phase == Phase::Train;
        self.states.clear();
        for actor in &mut self.actors {
            actor.traj.clear();
        }
    }

    fn act(&mut self, obs: &[Observation], explore: bool) -> Result<Vec<f64>, AgentError> {
        check_firms(self.actors.len(), obs.len())?;
        let record = explore && self.recording;
        let actions = self
            .actors
            .iter_mut()
            .zip(obs)
            .map(|(a, o)| a.act(o, explore, record))
            .collect::<Result<Vec<_>, _>>()?;
        if record {
            // Kept for the critic only; acting above never sees it.
            self.states.push(global_state(obs));
        }
        Ok(actions)
    }

    fn observe_outcome(&mut self, outcome: &StepOutcome) -> Result<(), AgentError> {
        check_firms(self.actors.len(), outcome.rewards.len())?;
        for (actor, &r) in self.actors.iter_mut().zip(&outcome.rewards) {
            if actor.traj.rewards.len() < actor.traj.len() {
                actor.traj.rewards.push(r / self.reward_scale);
            }
        }
        Ok(())
    }

    fn end_episode_update(&mut self, progress: f64) -> Result<Option<UpdateStats>, AgentError> {
        if self.states.is_empty() || self.actors.iter().any(|a| a.traj.is_empty()) {
            return Ok(None);
        }
        let ent = self.cfg.anneal_entropy(progress);
        self.fill_values()?;
        let steps = self.states.len();
        let mut returns = vec![Vec::with_capacity(self.actors.len()); steps];
        let mut old_values = vec![Vec::with_capacity(self.actors.len()); steps];
        let mut policy_stats = Vec::with_capacity(self.actors.len());
        for actor in &mut self.actors {
            let (batch, ret) = actor.traj.policy_batch(&self.cfg);
            for t in 0..steps {
                returns[t].push(ret[t]);
                old_values[t].push(actor.traj.values[t]);
            }
            policy_stats.push(update_policy(
                &mut actor.policy,
                &mut actor.opt,
                &batch,
                &self.cfg,
                ent,
                &mut self.update_rng,
            )?);
            actor.traj.clear();
        }
        let value_batch = ValueBatch {
            inputs: std::mem::take(&mut self.states),
            returns,
            old_values,
        };
        let value_loss = update_value(
            &mut self.critic,
            &mut self.critic_opt,
            &value_batch,
            &self.cfg,
            &mut self.update_rng,
        )?;
        let per_actor: Vec<UpdateStats> = policy_stats
            .iter()
            .map(|p| UpdateStats {
                policy_loss: p.policy_loss,
                value_loss,
                entropy: p.entropy,
                approx_kl: p.approx_kl,
                entropy_coef: ent,
                epochs_run: p.epochs_run,
                stopped_early: p.stopped_early,
            })
            .collect();
        Ok(UpdateStats::mean(&per_actor))
    }

    fn checkpoints(&self) -> Vec<(String, Checkpoint)> {
        let mut out: Vec<(String, Checkpoint)> = self
            .actors
            .iter()
            .enumerate()
            .map(|(i, a)| (format!("actor_{i}"), Checkpoint::from_policy(&a.policy)))
            .collect();
        out.push(("critic".to_string(), Checkpoint::from_mlp(&self.critic)));
        out
    }
}
