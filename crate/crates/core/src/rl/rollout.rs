//! On-policy experience collection.

use rand::Rng;

use crate::env::{CdprEnv, Observation};
use crate::error::{CdprError, Result};
use crate::neural::SampledAction;
use crate::rl::policy::{to_env_action, Policy, ValueFunction};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSummary {
    pub reward: f64,
    pub length: usize,
    pub success: bool,
}

/// Transitions in collection order. Observations are stored normalized with
/// the statistics frozen at collection time; `raw_observations` keeps the
/// unnormalized inputs for updating those statistics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutBatch {
    pub observations: Vec<Vec<f64>>,
    pub raw_observations: Vec<Vec<f64>>,
    pub actions: Vec<SampledAction>,
    pub rewards: Vec<f64>,
    pub terminated: Vec<bool>,
    /// Termination or truncation.
    pub episode_ends: Vec<bool>,
    pub values: Vec<f64>,
    /// Value of the successor observation, zero after termination.
    pub next_values: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub completed: Vec<EpisodeSummary>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Steps an environment across calls, carrying unfinished episodes over.
#[derive(Debug, Clone)]
pub struct Collector {
    pub env: CdprEnv,
    current: Option<Observation>,
    ep_reward: f64,
    ep_len: usize,
}

impl Collector {
    pub fn new(env: CdprEnv) -> Self {
        Self {
            env,
            current: None,
            ep_reward: 0.0,
            ep_len: 0,
        }
    }

    /// Drop any episode in progress; the next step starts a fresh one.
    pub fn restart(&mut self) {
        self.current = None;
        self.ep_reward = 0.0;
        self.ep_len = 0;
    }

    pub fn collect<R: Rng + ?Sized>(
        &mut self,
        policy: &Policy,
        value: &ValueFunction,
        n_steps: usize,
        rng: &mut R,
    ) -> Result<RolloutBatch> {
        if n_steps == 0 {
            return Err(CdprError::EmptyBatch);
        }
        if policy.obs_dim() != self.env.obs_dim() {
            return Err(CdprError::DimensionMismatch {
                expected: self.env.obs_dim(),
                found: policy.obs_dim(),
            });
        }
        let mut b = RolloutBatch::default();
        for _ in 0..n_steps {
            let obs = match self.current.take() {
                Some(o) => o,
                None => self.env.reset(),
            };
            let norm = policy.normalize(obs.as_slice());
            let (action, log_prob) = policy.sample(&norm, rng)?;
            let result = self.env.step(&to_env_action(&action)?)?;
            self.ep_reward += result.reward;
            self.ep_len += 1;

            let next_norm = policy.normalize(result.observation.as_slice());
            let next_value = if result.terminated {
                0.0
            } else {
                value.predict(&next_norm)?
            };
            b.values.push(value.predict(&norm)?);
            b.next_values.push(next_value);
            b.observations.push(norm);
            b.raw_observations.push(obs.0);
            b.actions.push(action);
            b.rewards.push(result.reward);
            b.terminated.push(result.terminated);
            b.episode_ends.push(result.done());
            b.log_probs.push(log_prob);
            if result.done() {
                b.completed.push(EpisodeSummary {
                    reward: self.ep_reward,
                    length: self.ep_len,
                    success: result.terminated,
                });
                self.restart();
            } else {
                self.current = Some(result.observation);
            }
        }
        Ok(b)
    }
}
