//! Deterministic actor-critic with target networks and a replay buffer.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{CdprError, Result};
use crate::neural::{backward_cached, forward, forward_cached, Adam, MlpSpec, ParamVector};
use crate::rl::policy::Policy;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Unnormalized observation.
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminated: bool,
}

/// Fixed-capacity ring; the oldest transition is overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: Vec::new(),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Contents from oldest to newest.
    pub fn iter_ordered(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.items.len() < n {
            return Err(CdprError::InsufficientReplay {
                have: self.items.len(),
                need: n,
            });
        }
        Ok((0..n)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdpgConfig {
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub exploration_std: f64,
    /// Uniform random actions are taken for this many initial steps.
    pub learning_starts: usize,
    /// Rewards are multiplied by this before entering the critic targets.
    pub reward_scale: f64,
    pub critic_lr_ratio: f64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            batch_size: 64,
            buffer_capacity: 100_000,
            exploration_std: 0.1,
            learning_starts: 1000,
            reward_scale: 0.1,
            critic_lr_ratio: 3.0,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(CdprError::config("ddpg.tau", "must be in (0, 1]"));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(CdprError::config(
                "ddpg.buffer_capacity",
                "must hold at least one batch",
            ));
        }
        if !(self.exploration_std >= 0.0) {
            return Err(CdprError::config("ddpg.exploration_std", "must be nonnegative"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(CdprError::config("ddpg.gamma", "must be in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdpgReport {
    pub critic_loss: f64,
    pub mean_q: f64,
}

#[derive(Debug, Clone)]
pub struct DdpgAgent {
    pub actor: Policy,
    pub actor_target: ParamVector,
    pub critic: MlpSpec,
    pub critic_params: ParamVector,
    pub critic_target: ParamVector,
    actor_opt: Adam,
    critic_opt: Adam,
    pub replay: ReplayBuffer,
}

fn soft_update(target: &mut ParamVector, source: &ParamVector, tau: f64) {
    for (t, s) in target.0.iter_mut().zip(&source.0) {
        *t += tau * (s - *t);
    }
}

impl DdpgAgent {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], capacity: usize, rng: &mut R) -> Result<Self> {
        let actor = Policy::deterministic(obs_dim, hidden, rng)?;
        let action_dim = actor.net.output_dim;
        let critic = MlpSpec::new(obs_dim + action_dim, hidden.to_vec(), 1)?;
        let critic_params = critic.init_params(rng, 1.0);
        Ok(Self {
            actor_target: actor.net_params.clone(),
            actor_opt: Adam::new(actor.net_params.len()),
            critic_opt: Adam::new(critic_params.len()),
            critic_target: critic_params.clone(),
            critic_params,
            critic,
            actor,
            replay: ReplayBuffer::new(capacity),
        })
    }

    fn action_from(&self, params: &ParamVector, norm_obs: &[f64]) -> Result<Vec<f64>> {
        Ok(forward(&self.actor.net, params, norm_obs)?
            .iter()
            .map(|u| u.tanh())
            .collect())
    }

    /// Greedy action plus clipped Gaussian noise.
    pub fn explore<R: Rng + ?Sized>(&self, obs: &[f64], std: f64, rng: &mut R) -> Result<Vec<f64>> {
        let norm = self.actor.normalize(obs);
        let mut a = self.action_from(&self.actor.net_params, &norm)?;
        if std > 0.0 {
            let noise = Normal::new(0.0, std).map_err(|e| CdprError::config("ddpg.exploration_std", e.to_string()))?;
            for x in a.iter_mut() {
                *x = (*x + noise.sample(rng)).clamp(-1.0, 1.0);
            }
        }
        Ok(a)
    }

    pub fn q_value(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        let mut input = self.actor.normalize(obs);
        input.extend_from_slice(action);
        Ok(forward(&self.critic, &self.critic_params, &input)?[0])
    }

    /// One critic regression step, one actor ascent step on the critic, then
    /// Polyak averaging of both targets.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        cfg: &DdpgConfig,
        actor_lr: f64,
        critic_lr: f64,
        rng: &mut R,
    ) -> Result<DdpgReport> {
        let batch: Vec<Transition> = self.replay.sample(cfg.batch_size, rng)?.into_iter().cloned().collect();
        let n = batch.len() as f64;
        let obs_dim = self.actor.obs_dim();

        let mut critic_grad = vec![0.0; self.critic_params.len()];
        let mut loss = 0.0;
        let mut norm_obs = Vec::with_capacity(batch.len());
        for t in &batch {
            let s = self.actor.normalize(&t.obs);
            let s_next = self.actor.normalize(&t.next_obs);
            let y = if t.terminated {
                cfg.reward_scale * t.reward
            } else {
                let a_next = self.action_from(&self.actor_target, &s_next)?;
                let mut inp = s_next;
                inp.extend(a_next);
                cfg.reward_scale * t.reward + cfg.gamma * forward(&self.critic, &self.critic_target, &inp)?[0]
            };
            let mut inp = s.clone();
            inp.extend_from_slice(&t.action);
            let cache = forward_cached(&self.critic, &self.critic_params, &inp)?;
            let err = cache.output()[0] - y;
            loss += err * err / n;
            backward_cached(
                &self.critic,
                &self.critic_params,
                &cache,
                &[2.0 * err / n],
                &mut critic_grad,
                None,
            )?;
            norm_obs.push(s);
        }
        if !critic_grad.iter().all(|g| g.is_finite()) {
            return Err(CdprError::NonFiniteGradient);
        }
        self.critic_opt.step(&mut self.critic_params.0, &critic_grad, critic_lr);

        let mut actor_grad = vec![0.0; self.actor.net_params.len()];
        let mut q_sum = 0.0;
        let mut scratch = vec![0.0; self.critic_params.len()];
        let mut input_grad = vec![0.0; self.critic.input_dim];
        for s in &norm_obs {
            let a_cache = forward_cached(&self.actor.net, &self.actor.net_params, s)?;
            let a: Vec<f64> = a_cache.output().iter().map(|u| u.tanh()).collect();
            let mut inp = s.clone();
            inp.extend_from_slice(&a);
            let c_cache = forward_cached(&self.critic, &self.critic_params, &inp)?;
            q_sum += c_cache.output()[0];
            backward_cached(
                &self.critic,
                &self.critic_params,
                &c_cache,
                &[1.0],
                &mut scratch,
                Some(&mut input_grad),
            )?;
            // descend on -Q through the tanh squash
            let d_raw: Vec<f64> = input_grad[obs_dim..]
                .iter()
                .zip(&a)
                .map(|(g, ai)| -g * (1.0 - ai * ai) / n)
                .collect();
            backward_cached(
                &self.actor.net,
                &self.actor.net_params,
                &a_cache,
                &d_raw,
                &mut actor_grad,
                None,
            )?;
        }
        if !actor_grad.iter().all(|g| g.is_finite()) {
            return Err(CdprError::NonFiniteGradient);
        }
        if actor_lr > 0.0 {
            self.actor_opt.step(&mut self.actor.net_params.0, &actor_grad, actor_lr);
        }
        soft_update(&mut self.critic_target, &self.critic_params, cfg.tau);
        soft_update(&mut self.actor_target, &self.actor.net_params, cfg.tau);
        Ok(DdpgReport {
            critic_loss: loss,
            mean_q: q_sum / n,
        })
    }
}
