//! Clipped-surrogate PPO losses with analytic gradients, and the epoch loop
//! that applies them.

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::mlp::{ForwardCache, Mlp};
use super::policy::{GaussianPolicy, PolicyGrad};
use super::{Adam, NnError};

/// PPO hyperparameters. Epoch count, minibatch size and gradient-norm
/// clipping are not pinned by the reference setup; see the field docs for
/// the values used here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub lr: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub entropy_coef_start: f64,
    pub entropy_coef_end: f64,
    /// Remaining epochs are skipped once the approximate KL exceeds this.
    pub kl_stop: f64,
    /// Epochs per update (4).
    pub epochs: usize,
    /// `None` trains on the whole episode at once.
    pub minibatch_size: Option<usize>,
    /// Clip the value loss around the pre-update estimates.
    pub value_clip: bool,
    /// Global gradient-norm clip per network (0.5).
    pub max_grad_norm: Option<f64>,
    pub hidden_units: usize,
    pub hidden_layers: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            entropy_coef_start: 0.005,
            entropy_coef_end: 0.001,
            kl_stop: 0.01,
            epochs: 10,
            minibatch_size: Some(10),
            value_clip: false,
            max_grad_norm: Some(0.5),
            hidden_units: 128,
            hidden_layers: 2,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::Config(m.to_string()));
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        if self.entropy_coef_start < 0.0 || self.entropy_coef_end < 0.0 {
            return bad("entropy coefficients must be nonnegative");
        }
        if !(self.kl_stop > 0.0) {
            return bad("kl_stop must be positive");
        }
        if self.epochs == 0 || self.hidden_units == 0 || self.hidden_layers == 0 {
            return bad("epochs and hidden sizes must be positive");
        }
        if self.minibatch_size == Some(0) {
            return bad("minibatch_size must be positive");
        }
        Ok(())
    }

    /// Linear entropy-coefficient schedule; `progress` is clamped to `[0, 1]`.
    pub fn anneal_entropy(&self, progress: f64) -> f64 {
        let p = progress.clamp(0.0, 1.0);
        self.entropy_coef_start + (self.entropy_coef_end - self.entropy_coef_start) * p
    }

    /// Layer sizes of a network with this config's hidden stack.
    pub fn dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(self.hidden_units, self.hidden_layers));
        dims.push(output);
        dims
    }
}

/// Samples for the policy loss. Advantages are expected standardized.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PolicyBatch {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<f64>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl PolicyBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn check(&self) -> Result<(), NnError> {
        let n = self.actions.len();
        if n == 0 {
            return Err(NnError::EmptyBatch);
        }
        if self.obs.len() != n || self.old_log_probs.len() != n || self.advantages.len() != n {
            return Err(NnError::Shape("policy batch columns differ in length".into()));
        }
        Ok(())
    }
}

/// Samples for the value loss. Each input may carry several value heads (one
/// per agent for a centralized critic).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValueBatch {
    pub inputs: Vec<Vec<f64>>,
    pub returns: Vec<Vec<f64>>,
    pub old_values: Vec<Vec<f64>>,
}

impl ValueBatch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn check(&self, heads: usize) -> Result<(), NnError> {
        if self.inputs.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let n = self.inputs.len();
        if self.returns.len() != n || self.old_values.len() != n {
            return Err(NnError::Shape("value batch columns differ in length".into()));
        }
        if self
            .returns
            .iter()
            .chain(&self.old_values)
            .any(|r| r.len() != heads)
        {
            return Err(NnError::Shape(format!("expected {heads} value heads per sample")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PolicyLoss {
    /// Total minimized objective: `-surrogate - entropy_coef * entropy`.
    pub loss: f64,
    pub surrogate: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Clipped-surrogate policy loss over the samples in `idx`, with an entropy
/// bonus. When `grad` is given, the loss gradient is accumulated into it.
pub fn policy_loss(
    policy: &GaussianPolicy,
    batch: &PolicyBatch,
    idx: &[usize],
    clip: f64,
    entropy_coef: f64,
    mut grad: Option<&mut PolicyGrad>,
) -> Result<PolicyLoss, NnError> {
    batch.check()?;
    if idx.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let inv_n = 1.0 / idx.len() as f64;
    let log_std = policy.log_std;
    let var = (2.0 * log_std).exp();
    let mut cache = ForwardCache::default();
    let mut surrogate = 0.0;
    let mut kl = 0.0;
    let mut clipped = 0usize;
    let mut d_log_std = 0.0;

    for &i in idx {
        let mean = policy.mean_cached(&batch.obs[i], &mut cache)?;
        let a = batch.actions[i];
        let adv = batch.advantages[i];
        let logp = policy.log_prob(a, mean);
        let log_ratio = logp - batch.old_log_probs[i];
        let ratio = log_ratio.exp();
        let clipped_ratio = ratio.clamp(1.0 - clip, 1.0 + clip);
        let unclipped_obj = ratio * adv;
        let clipped_obj = clipped_ratio * adv;
        // The gradient flows through whichever branch of the min is active;
        // the clipped branch is flat outside the trust region.
        let active = unclipped_obj <= clipped_obj;
        surrogate += unclipped_obj.min(clipped_obj);
        kl += -log_ratio;
        if (ratio - 1.0).abs() > clip {
            clipped += 1;
        }
        if let Some(g) = grad.as_deref_mut() {
            if active {
                // d logp / d mean = (a - mean) / var; d logp / d log_std = z^2 - 1
                let coeff = -inv_n * adv * ratio;
                let d_mean = coeff * (a - mean) / var;
                let z2 = (a - mean) * (a - mean) / var;
                d_log_std += coeff * (z2 - 1.0);
                policy.mean_net.backward(&cache, &[d_mean], &mut g.net);
            }
        }
    }

    let surrogate = surrogate * inv_n;
    let entropy = policy.entropy();
    let loss = -surrogate - entropy_coef * entropy;
    if let Some(g) = grad {
        g.log_std += d_log_std - entropy_coef;
    }
    if !loss.is_finite() {
        return Err(NnError::NonFinite("policy loss".into()));
    }
    Ok(PolicyLoss {
        loss,
        surrogate,
        entropy,
        approx_kl: kl * inv_n,
        clip_fraction: clipped as f64 * inv_n,
    })
}

/// Mean of `old_logp - new_logp` over the whole batch.
pub fn approx_kl(policy: &GaussianPolicy, batch: &PolicyBatch) -> Result<f64, NnError> {
    batch.check()?;
    let mut cache = ForwardCache::default();
    let mut kl = 0.0;
    for i in 0..batch.len() {
        let mean = policy.mean_cached(&batch.obs[i], &mut cache)?;
        kl += batch.old_log_probs[i] - policy.log_prob(batch.actions[i], mean);
    }
    Ok(kl / batch.len() as f64)
}

/// Half mean squared value error over the samples in `idx` and every head.
/// With `clip`, each term is the larger of the plain error and the error of
/// the estimate clipped to `old_value +- clip`.
pub fn value_loss(
    critic: &Mlp,
    batch: &ValueBatch,
    idx: &[usize],
    clip: Option<f64>,
    mut grad: Option<&mut [f64]>,
) -> Result<f64, NnError> {
    let heads = critic.output_dim();
    batch.check(heads)?;
    if idx.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let inv_n = 1.0 / (idx.len() * heads) as f64;
    let mut cache = ForwardCache::default();
    let mut d_out = vec![0.0; heads];
    let mut loss = 0.0;
    for &i in idx {
        critic.forward_cached(&batch.inputs[i], &mut cache)?;
        for k in 0..heads {
            let v = cache.output()[k];
            let ret = batch.returns[i][k];
            let err = v - ret;
            let (term, d) = match clip {
                Some(eps) => {
                    let old = batch.old_values[i][k];
                    let delta = v - old;
                    let v_clipped = old + delta.clamp(-eps, eps);
                    let err_c = v_clipped - ret;
                    if err * err >= err_c * err_c {
                        (err * err, err)
                    } else {
                        let inside = delta.abs() < eps;
                        (err_c * err_c, if inside { err_c } else { 0.0 })
                    }
                }
                None => (err * err, err),
            };
            loss += 0.5 * term;
            d_out[k] = d * inv_n;
        }
        if let Some(g) = grad.as_deref_mut() {
            critic.backward(&cache, &d_out, g);
        }
    }
    let loss = loss * inv_n;
    if !loss.is_finite() {
        return Err(NnError::NonFinite("value loss".into()));
    }
    Ok(loss)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyUpdateStats {
    pub policy_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

/// Training statistics of one end-of-episode update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub entropy_coef: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

impl UpdateStats {
    /// Averages per-agent statistics; `stopped_early` is set if any agent
    /// stopped early, `epochs_run` is the minimum.
    pub fn mean(stats: &[UpdateStats]) -> Option<UpdateStats> {
        if stats.is_empty() {
            return None;
        }
        let n = stats.len() as f64;
        let avg = |f: fn(&UpdateStats) -> f64| stats.iter().map(f).sum::<f64>() / n;
        Some(UpdateStats {
            policy_loss: avg(|s| s.policy_loss),
            value_loss: avg(|s| s.value_loss),
            entropy: avg(|s| s.entropy),
            approx_kl: avg(|s| s.approx_kl),
            entropy_coef: avg(|s| s.entropy_coef),
            epochs_run: stats.iter().map(|s| s.epochs_run).min().unwrap_or(0),
            stopped_early: stats.iter().any(|s| s.stopped_early),
        })
    }
}

fn minibatches(n: usize, size: Option<usize>, rng: &mut dyn RngCore) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    match size {
        Some(m) if m < n => {
            idx.shuffle(rng);
            idx.chunks(m).map(<[usize]>::to_vec).collect()
        }
        _ => vec![idx],
    }
}

fn clip_norm(grad: &mut [f64], max_norm: Option<f64>) {
    if let Some(max) = max_norm {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > max {
            let k = max / norm;
            grad.iter_mut().for_each(|g| *g *= k);
        }
    }
}

/// Runs the clipped-surrogate epochs on one actor. After each epoch the
/// approximate KL to the behaviour policy is measured and the remaining
/// epochs are skipped once it exceeds `cfg.kl_stop`.
pub fn update_policy(
    policy: &mut GaussianPolicy,
    opt: &mut Adam,
    batch: &PolicyBatch,
    cfg: &PpoConfig,
    entropy_coef: f64,
    rng: &mut dyn RngCore,
) -> Result<PolicyUpdateStats, NnError> {
    batch.check()?;
    let mut stats = PolicyUpdateStats::default();
    for _ in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut clip_sum = 0.0;
        let chunks = minibatches(batch.len(), cfg.minibatch_size, rng);
        for chunk in &chunks {
            let mut grad = PolicyGrad::zeros(policy);
            let l = policy_loss(policy, batch, chunk, cfg.clip, entropy_coef, Some(&mut grad))?;
            if let Some(max) = cfg.max_grad_norm {
                let norm = grad.norm();
                if norm > max {
                    grad.scale(max / norm);
                }
            }
            if grad.net.iter().any(|g| !g.is_finite()) || !grad.log_std.is_finite() {
                return Err(NnError::NonFinite("policy gradient".into()));
            }
            policy.apply_grad(opt, &grad);
            loss_sum += l.loss;
            clip_sum += l.clip_fraction;
            stats.entropy = l.entropy;
        }
        stats.policy_loss = loss_sum / chunks.len() as f64;
        stats.clip_fraction = clip_sum / chunks.len() as f64;
        stats.epochs_run += 1;
        stats.approx_kl = approx_kl(policy, batch)?;
        if !stats.approx_kl.is_finite() {
            return Err(NnError::NonFinite("approximate KL".into()));
        }
        if stats.approx_kl > cfg.kl_stop {
            stats.stopped_early = true;
            break;
        }
    }
    Ok(stats)
}

/// Regresses a critic onto its returns for `cfg.epochs` epochs. Returns the
/// loss of the final epoch.
pub fn update_value(
    critic: &mut Mlp,
    opt: &mut Adam,
    batch: &ValueBatch,
    cfg: &PpoConfig,
    rng: &mut dyn RngCore,
) -> Result<f64, NnError> {
    let clip = cfg.value_clip.then_some(cfg.clip);
    let mut last = 0.0;
    for _ in 0..cfg.epochs {
        let chunks = minibatches(batch.len(), cfg.minibatch_size, rng);
        let mut loss_sum = 0.0;
        for chunk in &chunks {
            let mut grad = vec![0.0; critic.num_params()];
            loss_sum += value_loss(critic, batch, chunk, clip, Some(&mut grad))?;
            clip_norm(&mut grad, cfg.max_grad_norm);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(NnError::NonFinite("value gradient".into()));
            }
            opt.step(critic.params_mut(), &grad);
        }
        last = loss_sum / chunks.len() as f64;
    }
    Ok(last)
}

/// One PPO update of an actor and its own critic.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update(
    policy: &mut GaussianPolicy,
    policy_opt: &mut Adam,
    critic: &mut Mlp,
    critic_opt: &mut Adam,
    policy_batch: &PolicyBatch,
    value_batch: &ValueBatch,
    cfg: &PpoConfig,
    entropy_coef: f64,
    rng: &mut dyn RngCore,
) -> Result<UpdateStats, NnError> {
    let p = update_policy(policy, policy_opt, policy_batch, cfg, entropy_coef, rng)?;
    let value_loss = update_value(critic, critic_opt, value_batch, cfg, rng)?;
    Ok(UpdateStats {
        policy_loss: p.policy_loss,
        value_loss,
        entropy: p.entropy,
        approx_kl: p.approx_kl,
        entropy_coef,
        epochs_run: p.epochs_run,
        stopped_early: p.stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_policy(seed: u64) -> GaussianPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GaussianPolicy::new(Mlp::orthogonal(&[3, 4, 4, 1], 1.0, 0.5, &mut rng), -0.3)
    }

    fn on_policy_batch(policy: &GaussianPolicy, n: usize, seed: u64) -> PolicyBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = PolicyBatch::default();
        for i in 0..n {
            let obs = vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos(), 0.5];
            let (a, lp) = policy.sample(&obs, &mut rng).unwrap();
            b.obs.push(obs);
            b.actions.push(a);
            b.old_log_probs.push(lp);
            b.advantages.push((i as f64 * 0.7).sin());
        }
        b
    }

    #[test]
    fn defaults_follow_reference_hyperparameters() {
        let c = PpoConfig::default();
        assert_eq!(c.lr, 5e-5);
        assert_eq!(c.gamma, 0.99);
        assert_eq!(c.lambda, 0.95);
        assert_eq!(c.clip, 0.2);
        assert_eq!((c.entropy_coef_start, c.entropy_coef_end), (0.005, 0.001));
        assert_eq!(c.kl_stop, 0.01);
        assert_eq!((c.hidden_layers, c.hidden_units), (2, 128));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn entropy_schedule_endpoints() {
        let c = PpoConfig::default();
        assert_eq!(c.anneal_entropy(0.0), 0.005);
        assert_eq!(c.anneal_entropy(1.0), 0.001);
        assert!((c.anneal_entropy(0.5) - 0.003).abs() < 1e-15);
    }

    #[test]
    fn identity_policy_has_unit_ratio() {
        let p = toy_policy(1);
        let b = on_policy_batch(&p, 16, 2);
        let idx: Vec<usize> = (0..16).collect();
        let l = policy_loss(&p, &b, &idx, 0.2, 0.0, None).unwrap();
        assert!(l.approx_kl.abs() < 1e-14);
        assert_eq!(l.clip_fraction, 0.0);
        let mean_adv = b.advantages.iter().sum::<f64>() / 16.0;
        assert!((l.surrogate - mean_adv).abs() < 1e-12);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        // Zero advantages and no entropy bonus leave nothing to differentiate.
        let p = toy_policy(2);
        let mut b = on_policy_batch(&p, 8, 3);
        b.advantages.iter_mut().for_each(|a| *a = 0.0);
        let mut g = PolicyGrad::zeros(&p);
        policy_loss(&p, &b, &(0..8).collect::<Vec<_>>(), 0.2, 0.0, Some(&mut g)).unwrap();
        assert!(g.net.iter().all(|&v| v == 0.0));
        assert_eq!(g.log_std, 0.0);
    }

    #[test]
    fn entropy_gradient_is_linear_in_coefficient() {
        let p = toy_policy(3);
        let mut b = on_policy_batch(&p, 4, 4);
        b.advantages.iter_mut().for_each(|a| *a = 0.0);
        let idx = [0, 1, 2, 3];
        let mut g1 = PolicyGrad::zeros(&p);
        let mut g2 = PolicyGrad::zeros(&p);
        policy_loss(&p, &b, &idx, 0.2, 0.01, Some(&mut g1)).unwrap();
        policy_loss(&p, &b, &idx, 0.2, 0.02, Some(&mut g2)).unwrap();
        assert!((g2.log_std - 2.0 * g1.log_std).abs() < 1e-15);
    }

    #[test]
    fn kl_early_stop_skips_later_epochs() {
        let mut p = toy_policy(4);
        let mut b = on_policy_batch(&p, 16, 5);
        // Stale behaviour log-probs far above the current ones force a large KL.
        b.old_log_probs.iter_mut().for_each(|lp| *lp += 1.0);
        let mut opt = Adam::new(p.mean_net.num_params() + 1, 1e-4);
        let cfg = PpoConfig {
            minibatch_size: None,
            ..PpoConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = update_policy(&mut p, &mut opt, &b, &cfg, 0.0, &mut rng).unwrap();
        assert!(s.stopped_early);
        assert_eq!(s.epochs_run, 1);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn positive_advantages_pull_the_mean_toward_their_actions() {
        // Zero weights: the mean is the output bias alone.
        let mut p = GaussianPolicy::new(Mlp::zeros(&[2, 3, 1]), 0.0);
        let mut b = PolicyBatch::default();
        for i in 0..20 {
            let a = if i % 2 == 0 { 0.8 } else { -0.8 };
            b.obs.push(vec![0.0, 0.0]);
            b.actions.push(a);
            b.old_log_probs.push(p.log_prob(a, 0.0));
            b.advantages.push(if a > 0.0 { 1.0 } else { -1.0 });
        }
        // Closed form: d surrogate / d mean = mean(A * (a - mean)) > 0.
        let mut opt = Adam::new(p.mean_net.num_params() + 1, 1e-3);
        let cfg = PpoConfig {
            max_grad_norm: None,
            ..PpoConfig::default()
        };
        let before = p.mean(&[0.0, 0.0]).unwrap();
        update_policy(&mut p, &mut opt, &b, &cfg, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(p.mean(&[0.0, 0.0]).unwrap() > before);
    }

    #[test]
    fn value_clipping_freezes_far_estimates() {
        let mut critic = Mlp::zeros(&[1, 2, 1]);
        let n = critic.num_params();
        critic.params_mut()[n - 1] = 1.0; // v = 1 everywhere
        let batch = ValueBatch {
            inputs: vec![vec![0.0]],
            returns: vec![vec![3.0]],
            old_values: vec![vec![0.0]],
        };
        // Clipped estimate 0.2 has the larger error, and v sits outside the
        // clip range, so the gradient vanishes.
        let mut g = vec![0.0; n];
        let l = value_loss(&critic, &batch, &[0], Some(0.2), Some(&mut g)).unwrap();
        assert!((l - 0.5 * 2.8 * 2.8).abs() < 1e-12);
        assert!(g.iter().all(|&v| v == 0.0));
        let mut g = vec![0.0; n];
        value_loss(&critic, &batch, &[0], None, Some(&mut g)).unwrap();
        assert_eq!(g[n - 1], -2.0);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let p = toy_policy(5);
        assert!(matches!(
            policy_loss(&p, &PolicyBatch::default(), &[], 0.2, 0.0, None),
            Err(NnError::EmptyBatch)
        ));
    }
}
