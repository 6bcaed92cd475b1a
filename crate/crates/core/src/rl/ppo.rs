//! Clipped-ratio policy optimization.

use rand::Rng;

use crate::error::{CdprError, Result};
use crate::neural::{backward_cached, clip_grad_norm, kl_divergence, Adam, SampledAction};
use crate::rl::policy::{shuffle, Policy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            epochs: 10,
            minibatch: 64,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(CdprError::config("ppo.clip_eps", "must be in (0, 1)"));
        }
        if self.epochs == 0 || self.minibatch == 0 {
            return Err(CdprError::config("ppo.epochs", "epochs and minibatch must be positive"));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(CdprError::config("ppo.max_grad_norm", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoReport {
    pub objective: f64,
    /// Mean KL(old || new) over the batch after all epochs.
    pub kl: f64,
    pub clip_fraction: f64,
    pub entropy: f64,
}

/// `min(r A, clip(r, 1-eps, 1+eps) A)` and its derivative in `r`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if unclipped <= clipped {
        (unclipped, advantage)
    } else {
        (clipped, 0.0)
    }
}

/// Mean clipped surrogate plus entropy bonus over `idx`, and its gradient in
/// flat policy coordinates. The third value counts clipped samples.
pub fn ppo_objective_grad(
    policy: &Policy,
    obs: &[Vec<f64>],
    actions: &[SampledAction],
    old_log_probs: &[f64],
    advantages: &[f64],
    idx: &[usize],
    cfg: &PpoConfig,
) -> Result<(f64, Vec<f64>, usize)> {
    let n = idx.len() as f64;
    let n_net = policy.net_params.len();
    let mut grad = vec![0.0; policy.param_count()];
    let (g_net, g_std) = grad.split_at_mut(n_net);
    let mut objective = 0.0;
    let mut clipped = 0;
    for &i in idx {
        let cache = policy.output_cached(&obs[i])?;
        let dist = policy.dist(cache.output())?;
        let ratio = (dist.log_prob(&actions[i])? - old_log_probs[i]).exp();
        let (value, d_ratio) = clipped_surrogate(ratio, advantages[i], cfg.clip_eps);
        if (ratio - 1.0).abs() > cfg.clip_eps {
            clipped += 1;
        }
        objective += (value + cfg.entropy_coef * dist.entropy()) / n;
        // d ratio / d logp = ratio
        let w = d_ratio * ratio / n;
        let lg = dist.log_prob_grad(&actions[i])?;
        let eg = dist.entropy_grad();
        let out: Vec<f64> = lg
            .output
            .iter()
            .zip(&eg.output)
            .map(|(l, e)| w * l + cfg.entropy_coef * e / n)
            .collect();
        backward_cached(&policy.net, &policy.net_params, &cache, &out, g_net, None)?;
        for ((g, l), e) in g_std.iter_mut().zip(&lg.log_std).zip(&eg.log_std) {
            *g += w * l + cfg.entropy_coef * e / n;
        }
    }
    Ok((objective, grad, clipped))
}

/// Several epochs of minibatch ascent on the clipped objective.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut Policy,
    opt: &mut Adam,
    obs: &[Vec<f64>],
    actions: &[SampledAction],
    old_log_probs: &[f64],
    advantages: &[f64],
    cfg: &PpoConfig,
    lr: f64,
    rng: &mut R,
) -> Result<PpoReport> {
    if obs.is_empty() {
        return Err(CdprError::EmptyBatch);
    }
    let old = policy.clone();
    let mut idx: Vec<usize> = (0..obs.len()).collect();
    let mut objective = 0.0;
    let mut clipped = 0;
    for _ in 0..cfg.epochs {
        shuffle(&mut idx, rng);
        objective = 0.0;
        clipped = 0;
        for chunk in idx.chunks(cfg.minibatch) {
            let (obj, mut grad, c) = ppo_objective_grad(policy, obs, actions, old_log_probs, advantages, chunk, cfg)?;
            if !grad.iter().all(|g| g.is_finite()) {
                return Err(CdprError::NonFiniteGradient);
            }
            objective += obj * chunk.len() as f64 / obs.len() as f64;
            clipped += c;
            clip_grad_norm(&mut grad, cfg.max_grad_norm);
            grad.iter_mut().for_each(|g| *g = -*g);
            let mut flat = policy.flat_params();
            opt.step(&mut flat.0, &grad, lr);
            policy.set_flat_params(&flat)?;
        }
    }
    let mut kl = 0.0;
    let mut entropy = 0.0;
    for o in obs {
        let a = old.output(o)?;
        let b = policy.output(o)?;
        let new_dist = policy.dist(&b)?;
        kl += kl_divergence(&old.dist(&a)?, &new_dist);
        entropy += new_dist.entropy();
    }
    let n = obs.len() as f64;
    Ok(PpoReport {
        objective,
        kl: kl / n,
        clip_fraction: clipped as f64 / n,
        entropy: entropy / n,
    })
}
