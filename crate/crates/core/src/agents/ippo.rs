//! Independent PPO: every firm owns an actor and a critic over its local
//! observation and learns only from its own trajectory.

use rand_chacha::ChaCha8Rng;

use super::rollout::{critic_net, Actor, Trajectory};
use super::{check_firms, AgentError, AgentPolicy, Phase};
use crate::env::{Observation, StepOutcome, OBS_DIM};
use crate::nn::{
    policy_loss, ppo_update, Adam, Checkpoint, Mlp, PolicyGrad, PpoConfig, UpdateStats, ValueBatch,
};
use crate::scenario::Algorithm;
use crate::seed;

#[derive(Clone, Debug)]
pub struct IppoAgents {
    cfg: PpoConfig,
    reward_scale: f64,
    actors: Vec<Actor>,
    critics: Vec<Mlp>,
    critic_opts: Vec<Adam>,
    update_rng: ChaCha8Rng,
    recording: bool,
    access_log: Vec<(usize, usize)>,
}

impl IppoAgents {
    pub fn new(n: usize, cfg: PpoConfig, reward_scale: f64, seed: u64) -> Result<Self, AgentError> {
        cfg.validate()?;
        let critics: Vec<Mlp> = (0..n)
            .map(|i| critic_net(OBS_DIM, 1, &cfg, seed, &i.to_string()))
            .collect();
        Ok(Self {
            actors: (0..n).map(|i| Actor::new(i, &cfg, seed)).collect(),
            critic_opts: critics.iter().map(|c| Adam::new(c.num_params(), cfg.lr)).collect(),
            critics,
            update_rng: seed::stream(seed, &["update"]),
            reward_scale: if reward_scale > 0.0 { reward_scale } else { 1.0 },
            recording: false,
            access_log: Vec::new(),
            cfg,
        })
    }

    pub fn num_firms(&self) -> usize {
        self.actors.len()
    }

    pub fn config(&self) -> &PpoConfig {
        &self.cfg
    }

    pub fn policy(&self, firm: usize) -> &crate::nn::GaussianPolicy {
        &self.actors[firm].policy
    }

    pub fn policy_mut(&mut self, firm: usize) -> &mut crate::nn::GaussianPolicy {
        &mut self.actors[firm].policy
    }

    pub fn critic(&self, firm: usize) -> &Mlp {
        &self.critics[firm]
    }

    pub fn critic_mut(&mut self, firm: usize) -> &mut Mlp {
        &mut self.critics[firm]
    }

    pub fn trajectory(&self, firm: usize) -> &Trajectory {
        &self.actors[firm].traj
    }

    /// `(updating firm, trajectory owner)` for every trajectory read by an
    /// update.
    pub fn access_log(&self) -> &[(usize, usize)] {
        &self.access_log
    }

    fn fill_values(&mut self, firm: usize) -> Result<(), AgentError> {
        let critic = &self.critics[firm];
        let traj = &mut self.actors[firm].traj;
        self.access_log.push((firm, traj.owner));
        traj.values = traj
            .obs
            .iter()
            .map(|o| critic.forward(o).map(|v| v[0]))
            .collect::<Result<_, _>>()?;
        // Episodes end at the horizon, so the final step is terminal.
        traj.bootstrap = 0.0;
        Ok(())
    }

    /// Policy-loss gradient for `firm` on its current trajectory, with values
    /// from its own critic. Does not modify any parameters.
    pub fn actor_gradient(&mut self, firm: usize, entropy_coef: f64) -> Result<PolicyGrad, AgentError> {
        self.fill_values(firm)?;
        let actor = &self.actors[firm];
        let (batch, _) = actor.traj.policy_batch(&self.cfg);
        let idx: Vec<usize> = (0..batch.len()).collect();
        let mut grad = PolicyGrad::zeros(&actor.policy);
        policy_loss(&actor.policy, &batch, &idx, self.cfg.clip, entropy_coef, Some(&mut grad))?;
        Ok(grad)
    }
}

impl AgentPolicy for IppoAgents {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Ippo
    }

    fn begin_episode(&mut self, _episode: usize, phase: Phase) {
        self.recording = phase == Phase::Train;
        for actor in &mut self.actors {
            actor.traj.clear();
        }
    }

    fn act(&mut self, obs: &[Observation], explore: bool) -> Result<Vec<f64>, AgentError> {
        check_firms(self.actors.len(), obs.len())?;
        let record = explore && self.recording;
        self.actors
            .iter_mut()
            .zip(obs)
            .map(|(a, o)| a.act(o, explore, record))
            .collect()
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
        if self.actors.iter().any(|a| a.traj.is_empty()) {
            return Ok(None);
        }
        let ent = self.cfg.anneal_entropy(progress);
        let mut stats = Vec::with_capacity(self.actors.len());
        for i in 0..self.actors.len() {
            self.fill_values(i)?;
            let actor = &mut self.actors[i];
            let (batch, returns) = actor.traj.policy_batch(&self.cfg);
            let values = ValueBatch {
                inputs: batch.obs.clone(),
                returns: returns.iter().map(|&r| vec![r]).collect(),
                old_values: actor.traj.values.iter().map(|&v| vec![v]).collect(),
            };
            stats.push(ppo_update(
                &mut actor.policy,
                &mut actor.opt,
                &mut self.critics[i],
                &mut self.critic_opts[i],
                &batch,
                &values,
                &self.cfg,
                ent,
                &mut self.update_rng,
            )?);
            actor.traj.clear();
        }
        Ok(UpdateStats::mean(&stats))
    }

    fn checkpoints(&self) -> Vec<(String, Checkpoint)> {
        let mut out = Vec::new();
        for (i, (a, c)) in self.actors.iter().zip(&self.critics).enumerate() {
            out.push((format!("actor_{i}"), Checkpoint::from_policy(&a.policy)));
            out.push((format!("critic_{i}"), Checkpoint::from_mlp(c)));
        }
        out
    }
}
