//! Generalized advantage estimation.

use crate::error::{CdprError, Result};
use crate::rl::rollout::RolloutBatch;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaeConfig {
    pub gamma: f64,
    pub lam: f64,
}

impl Default for GaeConfig {
    fn default() -> Self {
        Self { gamma: 0.99, lam: 0.95 }
    }
}

impl GaeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(CdprError::config("algorithm.gamma", "must be in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.lam) {
            return Err(CdprError::config("algorithm.lam", "must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Backward recursion over the batch:
///
/// ```text
/// delta_t = r_t + gamma * V(s_{t+1}) - V(s_t)      (V(s_{t+1}) = 0 after termination)
/// A_t     = delta_t + gamma * lam * (1 - end_t) * A_{t+1}
/// ```
///
/// `end_t` marks any episode boundary, so truncated tails bootstrap from the
/// value of their final observation. Returns `(advantages, returns)` with
/// `returns = advantages + values`.
pub fn gae_advantages(batch: &RolloutBatch, cfg: &GaeConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = batch.len();
    if n == 0 {
        return Err(CdprError::EmptyBatch);
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let delta = batch.rewards[t] + cfg.gamma * batch.next_values[t] - batch.values[t];
        let carry = if batch.episode_ends[t] || t + 1 == n {
            0.0
        } else {
            next_adv
        };
        adv[t] = delta + cfg.gamma * cfg.lam * carry;
        next_adv = adv[t];
    }
    let returns = adv.iter().zip(&batch.values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Zero-mean, unit-variance rescaling; a constant sequence maps to zeros.
pub fn standardize(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return vec![];
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - mean) / std).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::SampledAction;

    fn batch(rewards: &[f64], ends: &[bool], values: &[f64], next_values: &[f64]) -> RolloutBatch {
        let n = rewards.len();
        RolloutBatch {
            observations: vec![vec![0.0]; n],
            raw_observations: vec![vec![0.0]; n],
            actions: vec![SampledAction::Discrete(vec![0]); n],
            rewards: rewards.to_vec(),
            terminated: ends.to_vec(),
            episode_ends: ends.to_vec(),
            values: values.to_vec(),
            next_values: next_values.to_vec(),
            log_probs: vec![0.0; n],
            completed: vec![],
        }
    }

    #[test]
    fn single_terminal_step() {
        let b = batch(&[1.0], &[true], &[0.0], &[0.0]);
        let (a, r) = gae_advantages(&b, &GaeConfig::default()).unwrap();
        assert_eq!(a, vec![1.0]);
        assert_eq!(r, vec![1.0]);
    }

    #[test]
    fn lambda_zero_is_td_error() {
        let values = [0.5, -0.2, 1.0, 0.3, 0.7];
        let next = [-0.2, 1.0, 0.0, 0.7, 0.9];
        let rewards = [1.0, 2.0, -1.0, 0.5, 0.0];
        let ends = [false, false, true, false, false];
        let cfg = GaeConfig { gamma: 0.9, lam: 0.0 };
        let (a, _) = gae_advantages(&batch(&rewards, &ends, &values, &next), &cfg).unwrap();
        for t in 0..5 {
            assert_eq!(a[t], rewards[t] + 0.9 * next[t] - values[t]);
        }
    }

    #[test]
    fn lambda_one_is_suffix_sum() {
        // integer rewards, two episodes over 20 steps
        let rewards: Vec<f64> = (0..20).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let mut ends = vec![false; 20];
        ends[8] = true;
        ends[19] = true;
        let zeros = vec![0.0; 20];
        let cfg = GaeConfig { gamma: 1.0, lam: 1.0 };
        let (a, _) = gae_advantages(&batch(&rewards, &ends, &zeros, &zeros), &cfg).unwrap();
        for t in 0..20 {
            let end = if t <= 8 { 8 } else { 19 };
            let brute: f64 = rewards[t..=end].iter().sum();
            assert_eq!(a[t], brute);
        }
    }

    #[test]
    fn empty_batch() {
        let b = batch(&[], &[], &[], &[]);
        assert_eq!(gae_advantages(&b, &GaeConfig::default()), Err(CdprError::EmptyBatch));
    }

    #[test]
    fn standardize_removes_offsets() {
        let x = [1.0, 4.0, -2.0, 0.5];
        let y: Vec<f64> = x.iter().map(|v| v + 123.0).collect();
        let (a, b) = (standardize(&x), standardize(&y));
        for k in 0..4 {
            assert!((a[k] - b[k]).abs() < 1e-10);
        }
        assert!(a.iter().sum::<f64>().abs() < 1e-12);
    }
}
