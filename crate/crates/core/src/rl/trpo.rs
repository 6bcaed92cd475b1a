//! Trust-region policy step: natural gradient by conjugate gradient on the
//! Fisher-vector product, then a backtracking line search under a KL bound.

use crate::error::{CdprError, Result};
use crate::neural::{backward_cached, jvp_cached, kl_divergence, ForwardCache, ParamVector, SampledAction};
use crate::rl::policy::Policy;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrpoConfig {
    pub max_kl: f64,
    pub cg_iters: usize,
    pub cg_damping: f64,
    pub backtrack_coeff: f64,
    pub backtrack_iters: usize,
}

impl Default for TrpoConfig {
    fn default() -> Self {
        Self {
            max_kl: 0.01,
            cg_iters: 10,
            cg_damping: 0.1,
            backtrack_coeff: 0.8,
            backtrack_iters: 10,
        }
    }
}

impl TrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_kl > 0.0) {
            return Err(CdprError::config("trpo.max_kl", "must be positive"));
        }
        if !(self.cg_damping >= 0.0) {
            return Err(CdprError::config("trpo.cg_damping", "must be nonnegative"));
        }
        if !(self.backtrack_coeff > 0.0 && self.backtrack_coeff < 1.0) {
            return Err(CdprError::config("trpo.backtrack_coeff", "must be in (0, 1)"));
        }
        if self.cg_iters == 0 {
            return Err(CdprError::config("trpo.cg_iters", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrpoReport {
    pub surrogate_gain: f64,
    /// Mean KL of the accepted step, zero when rejected.
    pub kl: f64,
    pub accepted: bool,
    pub backtracks: usize,
    pub grad_norm: f64,
}

/// Solves `A x = b` for symmetric positive definite `A` given as a product.
pub fn conjugate_gradient<F>(mut apply: F, b: &[f64], iters: usize, tol: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    for _ in 0..iters {
        if rr < tol {
            break;
        }
        let ap = apply(&p)?;
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            break;
        }
        let alpha = rr / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Ok(x)
}

/// Per-sample forward passes of the pre-update policy.
pub(crate) struct BatchView<'a> {
    pub policy: &'a Policy,
    pub caches: Vec<ForwardCache>,
}

impl<'a> BatchView<'a> {
    pub fn new(policy: &'a Policy, obs: &[Vec<f64>]) -> Result<Self> {
        let caches = obs
            .iter()
            .map(|o| policy.output_cached(o))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { policy, caches })
    }

    fn n_net(&self) -> usize {
        self.policy.net_params.len()
    }

    /// Gradient of `mean(w_i * log pi(a_i | s_i))` in flat coordinates.
    pub fn weighted_log_prob_grad(&self, actions: &[SampledAction], weights: &[f64]) -> Result<Vec<f64>> {
        let p = self.policy;
        let n = self.caches.len() as f64;
        let mut grad = vec![0.0; p.param_count()];
        let (g_net, g_std) = grad.split_at_mut(self.n_net());
        for ((cache, a), w) in self.caches.iter().zip(actions).zip(weights) {
            let hg = p.dist(cache.output())?.log_prob_grad(a)?;
            let out: Vec<f64> = hg.output.iter().map(|g| g * w / n).collect();
            backward_cached(&p.net, &p.net_params, cache, &out, g_net, None)?;
            for (g, h) in g_std.iter_mut().zip(&hg.log_std) {
                *g += h * w / n;
            }
        }
        Ok(grad)
    }

    /// Mean Fisher matrix of the batch applied to a flat tangent.
    pub fn fisher_vector_product(&self, v: &[f64]) -> Result<Vec<f64>> {
        let p = self.policy;
        let n_net = self.n_net();
        let n = self.caches.len() as f64;
        let tangent = ParamVector(v[..n_net].to_vec());
        let v_std = &v[n_net..];
        let mut out = vec![0.0; v.len()];
        let (o_net, o_std) = out.split_at_mut(n_net);
        for cache in &self.caches {
            let jv = jvp_cached(&p.net, &p.net_params, cache, &tangent)?;
            let m = p.dist(cache.output())?.fisher_apply(&jv, v_std);
            let scaled: Vec<f64> = m.output.iter().map(|x| x / n).collect();
            backward_cached(&p.net, &p.net_params, cache, &scaled, o_net, None)?;
            for (o, x) in o_std.iter_mut().zip(&m.log_std) {
                *o += x / n;
            }
        }
        Ok(out)
    }
}

/// `(mean ratio * advantage, mean KL(old || candidate))` for a candidate
/// policy, against the cached old outputs.
pub(crate) fn surrogate_and_kl(
    old: &BatchView<'_>,
    candidate: &Policy,
    obs: &[Vec<f64>],
    actions: &[SampledAction],
    old_log_probs: &[f64],
    advantages: &[f64],
) -> Result<(f64, f64)> {
    let n = obs.len() as f64;
    let (mut surr, mut kl) = (0.0, 0.0);
    for i in 0..obs.len() {
        let out = candidate.output(&obs[i])?;
        let new_dist = candidate.dist(&out)?;
        let old_dist = old.policy.dist(old.caches[i].output())?;
        let ratio = (new_dist.log_prob(&actions[i])? - old_log_probs[i]).exp();
        surr += ratio * advantages[i] / n;
        kl += kl_divergence(&old_dist, &new_dist) / n;
    }
    Ok((surr, kl))
}

/// One trust-region step. On rejection the policy is left exactly as it was.
pub fn trpo_update(
    policy: &mut Policy,
    obs: &[Vec<f64>],
    actions: &[SampledAction],
    old_log_probs: &[f64],
    advantages: &[f64],
    cfg: &TrpoConfig,
) -> Result<TrpoReport> {
    if obs.is_empty() {
        return Err(CdprError::EmptyBatch);
    }
    let old_policy = policy.clone();
    let view = BatchView::new(&old_policy, obs)?;
    let g = view.weighted_log_prob_grad(actions, advantages)?;
    let grad_norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !grad_norm.is_finite() {
        return Err(CdprError::NonFiniteGradient);
    }
    let rejected = |backtracks| TrpoReport {
        surrogate_gain: 0.0,
        kl: 0.0,
        accepted: false,
        backtracks,
        grad_norm,
    };
    if grad_norm == 0.0 {
        return Ok(rejected(0));
    }

    let damped = |v: &[f64]| -> Result<Vec<f64>> {
        let mut fv = view.fisher_vector_product(v)?;
        for (f, x) in fv.iter_mut().zip(v) {
            *f += cfg.cg_damping * x;
        }
        Ok(fv)
    };
    let x = conjugate_gradient(damped, &g, cfg.cg_iters, 1e-10)?;
    let xfx: f64 = x.iter().zip(&damped(&x)?).map(|(a, b)| a * b).sum();
    if !(xfx.is_finite() && xfx > 0.0) {
        return Err(CdprError::NonFiniteGradient);
    }
    let step_scale = (2.0 * cfg.max_kl / xfx).sqrt();

    let (surr_old, _) = surrogate_and_kl(&view, &old_policy, obs, actions, old_log_probs, advantages)?;
    let base = old_policy.flat_params();
    let mut frac = 1.0;
    let mut candidate = old_policy.clone();
    for k in 0..cfg.backtrack_iters {
        let mut theta = base.clone();
        for (t, xi) in theta.0.iter_mut().zip(&x) {
            *t += frac * step_scale * xi;
        }
        candidate.set_flat_params(&theta)?;
        let (surr, kl) = surrogate_and_kl(&view, &candidate, obs, actions, old_log_probs, advantages)?;
        if surr.is_finite() && kl.is_finite() && surr > surr_old && kl <= cfg.max_kl {
            policy.set_flat_params(&theta)?;
            return Ok(TrpoReport {
                surrogate_gain: surr - surr_old,
                kl,
                accepted: true,
                backtracks: k,
                grad_norm,
            });
        }
        frac *= cfg.backtrack_coeff;
    }
    Ok(rejected(cfg.backtrack_iters))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ActionSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type Batch = (Policy, Vec<Vec<f64>>, Vec<SampledAction>, Vec<f64>, Vec<f64>);

    fn setup(spec: ActionSpec, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Policy::stochastic(3, &[6], spec, -0.3, &mut rng).unwrap();
        p.net_params = p.net.init_params(&mut rng, 0.5);
        let obs: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos(), 0.2])
            .collect();
        let mut actions = vec![];
        let mut lps = vec![];
        for o in &obs {
            let (a, lp) = p.sample(o, &mut rng).unwrap();
            actions.push(a);
            lps.push(lp);
        }
        let adv: Vec<f64> = (0..40).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        (p, obs, actions, lps, adv)
    }

    #[test]
    fn cg_solves_small_system() {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 2.0]];
        let b = [1.0, 2.0, 3.0];
        let mul = |v: &[f64]| Ok((0..3).map(|i| (0..3).map(|j| a[i][j] * v[j]).sum()).collect());
        let x = conjugate_gradient(mul, &b, 10, 1e-20).unwrap();
        for i in 0..3 {
            let ax: f64 = (0..3).map(|j| a[i][j] * x[j]).sum();
            assert!((ax - b[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn fisher_product_is_symmetric_psd() {
        for spec in [ActionSpec::Continuous, ActionSpec::Discrete { levels: 5 }] {
            let (p, obs, ..) = setup(spec, 3);
            let view = BatchView::new(&p, &obs).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let n = p.param_count();
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fu = view.fisher_vector_product(&u).unwrap();
            let fw = view.fisher_vector_product(&w).unwrap();
            let a: f64 = w.iter().zip(&fu).map(|(x, y)| x * y).sum();
            let b: f64 = u.iter().zip(&fw).map(|(x, y)| x * y).sum();
            assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
            assert!(u.iter().zip(&fu).map(|(x, y)| x * y).sum::<f64>() >= 0.0);
        }
    }

    #[test]
    fn fisher_matches_kl_curvature() {
        // second directional difference of mean KL(old || old + h v)
        let (p, obs, ..) = setup(ActionSpec::Continuous, 4);
        let view = BatchView::new(&p, &obs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..p.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fv = view.fisher_vector_product(&v).unwrap();
        let vfv: f64 = v.iter().zip(&fv).map(|(a, b)| a * b).sum();
        let h = 1e-3;
        let mut q = p.clone();
        let mut theta = p.flat_params();
        theta.axpy(h, &ParamVector(v.clone()));
        q.set_flat_params(&theta).unwrap();
        let zeros = vec![0.0; obs.len()];
        let actions: Vec<SampledAction> = obs.iter().map(|_| SampledAction::from_raw(vec![0.0; 4])).collect();
        let (_, kl) = surrogate_and_kl(&view, &q, &obs, &actions, &zeros, &zeros).unwrap();
        assert!((2.0 * kl / (h * h) - vfv).abs() < 1e-2 * vfv);
    }

    #[test]
    fn accepted_step_respects_trust_region() {
        for spec in [ActionSpec::Continuous, ActionSpec::Discrete { levels: 5 }] {
            let (mut p, obs, actions, lps, adv) = setup(spec, 5);
            let cfg = TrpoConfig::default();
            let r = trpo_update(&mut p, &obs, &actions, &lps, &adv, &cfg).unwrap();
            assert!(r.accepted);
            assert!(r.kl <= cfg.max_kl + 1e-12);
            assert!(r.surrogate_gain > 0.0);
        }
    }

    #[test]
    fn rejected_step_leaves_policy_untouched() {
        let (mut p, obs, actions, lps, adv) = setup(ActionSpec::Continuous, 6);
        let before = p.clone();
        let cfg = TrpoConfig {
            backtrack_iters: 0,
            ..TrpoConfig::default()
        };
        let r = trpo_update(&mut p, &obs, &actions, &lps, &adv, &cfg).unwrap();
        assert!(!r.accepted);
        assert_eq!(p, before);
    }

    #[test]
    fn zero_advantages_do_not_move() {
        let (mut p, obs, actions, lps, _) = setup(ActionSpec::Discrete { levels: 5 }, 7);
        let before = p.clone();
        let r = trpo_update(
            &mut p,
            &obs,
            &actions,
            &lps,
            &vec![0.0; obs.len()],
            &TrpoConfig::default(),
        )
        .unwrap();
        assert!(!r.accepted);
        assert_eq!(p, before);
    }

    #[test]
    fn non_finite_advantages_abort() {
        let (mut p, obs, actions, lps, mut adv) = setup(ActionSpec::Continuous, 8);
        adv[3] = f64::NAN;
        let before = p.clone();
        assert_eq!(
            trpo_update(&mut p, &obs, &actions, &lps, &adv, &TrpoConfig::default()),
            Err(CdprError::NonFiniteGradient)
        );
        assert_eq!(p, before);
    }
}
