use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use super::mlp::{ForwardCache, Mlp};
use super::NnError;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

/// Diagonal Gaussian over a scalar action: the mean comes from an MLP, the
/// log standard deviation is a free parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPolicy {
    pub mean_net: Mlp,
    pub log_std: f64,
}

/// Gradient of a loss with respect to a [`GaussianPolicy`].
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyGrad {
    pub net: Vec<f64>,
    pub log_std: f64,
}

impl PolicyGrad {
    pub fn zeros(policy: &GaussianPolicy) -> Self {
        Self {
            net: vec![0.0; policy.mean_net.num_params()],
            log_std: 0.0,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.net.iter().map(|g| g * g).sum::<f64>() + self.log_std * self.log_std).sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        self.net.iter_mut().for_each(|g| *g *= k);
        self.log_std *= k;
    }
}

impl GaussianPolicy {
    pub fn new(mean_net: Mlp, log_std: f64) -> Self {
        assert_eq!(mean_net.output_dim(), 1, "policy head must be scalar");
        Self {
            mean_net,
            log_std: log_std.clamp(LOG_STD_MIN, LOG_STD_MAX),
        }
    }

    pub fn std(&self) -> f64 {
        self.log_std.exp()
    }

    pub fn mean(&self, obs: &[f64]) -> Result<f64, NnError> {
        Ok(self.mean_net.forward(obs)?[0])
    }

    pub fn mean_cached(&self, obs: &[f64], cache: &mut ForwardCache) -> Result<f64, NnError> {
        self.mean_net.forward_cached(obs, cache)?;
        Ok(cache.output()[0])
    }

    pub fn log_prob(&self, action: f64, mean: f64) -> f64 {
        gaussian_log_prob(action, mean, self.log_std)
    }

    pub fn entropy(&self) -> f64 {
        gaussian_entropy(self.log_std)
    }

    /// Samples an action; returns `(action, log_prob)`.
    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<(f64, f64), NnError> {
        let mean = self.mean(obs)?;
        let z: f64 = rng.sample(StandardNormal);
        let action = mean + self.std() * z;
        Ok((action, self.log_prob(action, mean)))
    }

    /// Adam step over the network weights and the log standard deviation
    /// (stored at the end of the optimizer state); clamps `log_std` after.
    pub fn apply_grad(&mut self, opt: &mut super::Adam, grad: &PolicyGrad) {
        let n = self.mean_net.num_params();
        assert_eq!(opt.len(), n + 1, "optimizer sized for a different policy");
        opt.begin_step();
        opt.update_range(0, self.mean_net.params_mut(), &grad.net);
        let mut s = [self.log_std];
        opt.update_range(n, &mut s, &[grad.log_std]);
        self.log_std = s[0].clamp(LOG_STD_MIN, LOG_STD_MAX);
    }
}

pub fn gaussian_log_prob(action: f64, mean: f64, log_std: f64) -> f64 {
    let z = (action - mean) / log_std.exp();
    -0.5 * z * z - log_std - 0.5 * (2.0 * PI).ln()
}

pub fn gaussian_entropy(log_std: f64) -> f64 {
    0.5 * (2.0 * PI * std::f64::consts::E).ln() + log_std
}
