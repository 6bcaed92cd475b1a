//! Stochastic and deterministic policies, the state-value baseline, and the
//! adapter that lets a policy drive the tracking loop.

use rand::Rng;

use crate::env::{Action, ActionSpec, Observation, EXTENDED_OBS_DIM};
use crate::error::{CdprError, Result};
use crate::geometry::NUM_CABLES;
use crate::neural::{
    backward_cached, forward, forward_cached, ActionDist, Adam, ForwardCache, HeadKind, MlpSpec, ParamVector,
    RunningNorm, SampledAction,
};
use crate::tension::CableTensions;
use crate::trajectory::{ControlInput, Controller};

/// A network plus action head and the input normalizer it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub action_spec: ActionSpec,
    pub head: HeadKind,
    pub net: MlpSpec,
    pub net_params: ParamVector,
    /// State-independent log std; empty for non-Gaussian heads.
    pub log_std: Vec<f64>,
    pub obs_norm: RunningNorm,
}

impl Policy {
    /// Stochastic policy for `action_spec`: squashed Gaussian for continuous
    /// actions, one categorical per cable for discrete ones.
    pub fn stochastic<R: Rng + ?Sized>(
        obs_dim: usize,
        hidden: &[usize],
        action_spec: ActionSpec,
        init_log_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        action_spec.validate()?;
        let head = match action_spec {
            ActionSpec::Continuous => HeadKind::SquashedGaussian { dim: NUM_CABLES },
            ActionSpec::Discrete { levels } => HeadKind::Categorical {
                groups: NUM_CABLES,
                levels,
            },
        };
        let net = MlpSpec::new(obs_dim, hidden.to_vec(), head.net_output_dim())?;
        let net_params = net.init_params(rng, 0.01);
        Ok(Self {
            action_spec,
            head,
            net,
            net_params,
            log_std: vec![init_log_std; head.extra_params()],
            obs_norm: RunningNorm::new(obs_dim),
        })
    }

    /// Deterministic tanh policy over continuous actions.
    pub fn deterministic<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let head = HeadKind::Deterministic { dim: NUM_CABLES };
        let net = MlpSpec::new(obs_dim, hidden.to_vec(), NUM_CABLES)?;
        let net_params = net.init_params(rng, 0.1);
        Ok(Self {
            action_spec: ActionSpec::Continuous,
            head,
            net,
            net_params,
            log_std: vec![],
            obs_norm: RunningNorm::new(obs_dim),
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim
    }

    /// Overwrite the output-layer biases.
    pub fn set_output_bias(&mut self, bias: &[f64]) -> Result<()> {
        let out = self.net.output_dim;
        if bias.len() != out {
            return Err(CdprError::DimensionMismatch {
                expected: out,
                found: bias.len(),
            });
        }
        let n = self.net_params.len();
        self.net_params.0[n - out..].copy_from_slice(bias);
        Ok(())
    }

    /// Bias the initial action distribution so that its mean cable tension
    /// equals `tension` on every cable. Gaussian heads get the pre-squash
    /// mean of that tension; categorical heads split their mass between the
    /// two levels that bracket it.
    pub fn bias_towards_tension(&mut self, tension: f64, max_tension: f64) -> Result<()> {
        let frac = (tension / max_tension).clamp(0.0, 1.0);
        let bias = match self.head {
            HeadKind::SquashedGaussian { dim } | HeadKind::Deterministic { dim } => {
                let a = (2.0 * frac - 1.0).clamp(-0.999, 0.999);
                vec![a.atanh(); dim]
            }
            HeadKind::Categorical { groups, levels } => {
                let pos = frac * (levels - 1) as f64;
                let lo = (pos.floor() as usize).min(levels - 2);
                let w_hi = pos - lo as f64;
                let floor: f64 = 1e-3;
                let mut group = vec![floor.ln(); levels];
                group[lo] = (1.0 - w_hi).max(floor).ln();
                group[lo + 1] = w_hi.max(floor).ln();
                group.repeat(groups)
            }
        };
        self.set_output_bias(&bias)
    }

    pub fn param_count(&self) -> usize {
        self.net_params.len() + self.log_std.len()
    }

    /// Network parameters followed by the log std.
    pub fn flat_params(&self) -> ParamVector {
        let mut v = self.net_params.0.clone();
        v.extend_from_slice(&self.log_std);
        ParamVector(v)
    }

    pub fn set_flat_params(&mut self, flat: &ParamVector) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(CdprError::DimensionMismatch {
                expected: self.param_count(),
                found: flat.len(),
            });
        }
        let n = self.net_params.len();
        self.net_params.0.copy_from_slice(&flat.0[..n]);
        self.log_std.copy_from_slice(&flat.0[n..]);
        Ok(())
    }

    pub fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        self.obs_norm.normalize(obs)
    }

    /// Network output for an already normalized observation.
    pub fn output(&self, norm_obs: &[f64]) -> Result<Vec<f64>> {
        forward(&self.net, &self.net_params, norm_obs)
    }

    pub fn output_cached(&self, norm_obs: &[f64]) -> Result<ForwardCache> {
        forward_cached(&self.net, &self.net_params, norm_obs)
    }

    pub fn dist<'a>(&'a self, output: &'a [f64]) -> Result<ActionDist<'a>> {
        ActionDist::new(self.head, output, &self.log_std)
    }

    /// Samples an action for a normalized observation; returns it with its
    /// log probability (zero for deterministic heads).
    pub fn sample<R: Rng + ?Sized>(&self, norm_obs: &[f64], rng: &mut R) -> Result<(SampledAction, f64)> {
        let out = self.output(norm_obs)?;
        let dist = self.dist(&out)?;
        let a = dist.sample(rng);
        let lp = match self.head {
            HeadKind::Deterministic { .. } => 0.0,
            _ => dist.log_prob(&a)?,
        };
        Ok((a, lp))
    }

    /// Most likely action for a raw observation.
    pub fn act_deterministic(&self, obs: &[f64]) -> Result<Action> {
        let out = self.output(&self.normalize(obs))?;
        to_env_action(&self.dist(&out)?.mode())
    }

    /// Widen the input layer to `obs_dim` inputs. New inputs get zero
    /// weights and identity normalization, so outputs are unchanged.
    pub fn expand_inputs(&self, obs_dim: usize) -> Result<Self> {
        let old = self.obs_dim();
        if obs_dim < old {
            return Err(CdprError::DimensionMismatch {
                expected: old,
                found: obs_dim,
            });
        }
        let net = MlpSpec::new(obs_dim, self.net.hidden.clone(), self.net.output_dim)?;
        let (_, first_out) = self.net.layer_dims()[0];
        let mut params = Vec::with_capacity(net.param_count());
        for row in self.net_params.0[..old * first_out].chunks_exact(old) {
            params.extend_from_slice(row);
            params.extend(std::iter::repeat_n(0.0, obs_dim - old));
        }
        params.extend_from_slice(&self.net_params.0[old * first_out..]);
        Ok(Self {
            net,
            net_params: ParamVector(params),
            obs_norm: self.obs_norm.extended(obs_dim),
            ..self.clone()
        })
    }
}

pub fn to_env_action(a: &SampledAction) -> Result<Action> {
    match a {
        SampledAction::Continuous { squashed, .. } => {
            let arr: [f64; NUM_CABLES] = squashed
                .as_slice()
                .try_into()
                .map_err(|_| CdprError::DimensionMismatch {
                    expected: NUM_CABLES,
                    found: squashed.len(),
                })?;
            Ok(Action::Continuous(arr))
        }
        SampledAction::Discrete(levels) => {
            let arr: [usize; NUM_CABLES] = levels.as_slice().try_into().map_err(|_| CdprError::DimensionMismatch {
                expected: NUM_CABLES,
                found: levels.len(),
            })?;
            Ok(Action::Discrete(arr))
        }
    }
}

/// State-value network. Predictions are made in a normalized return scale
/// tracked by a running mean and variance.
#[derive(Debug, Clone)]
pub struct ValueFunction {
    pub net: MlpSpec,
    pub params: ParamVector,
    pub return_norm: RunningNorm,
    opt: Adam,
}

impl ValueFunction {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let net = MlpSpec::new(obs_dim, hidden.to_vec(), 1)?;
        let params = net.init_params(rng, 1.0);
        Ok(Self {
            opt: Adam::new(params.len()),
            net,
            params,
            return_norm: RunningNorm::new(1),
        })
    }

    fn scale(&self) -> (f64, f64) {
        (self.return_norm.mean[0], (self.return_norm.var[0] + 1e-8).sqrt())
    }

    pub fn predict(&self, norm_obs: &[f64]) -> Result<f64> {
        let (mu, sd) = self.scale();
        Ok(forward(&self.net, &self.params, norm_obs)?[0] * sd + mu)
    }

    /// Regress onto `returns` with minibatch Adam; returns the mean squared
    /// error (in normalized units) of the final epoch.
    pub fn fit<R: Rng + ?Sized>(
        &mut self,
        obs: &[Vec<f64>],
        returns: &[f64],
        epochs: usize,
        minibatch: usize,
        lr: f64,
        rng: &mut R,
    ) -> Result<f64> {
        if obs.is_empty() {
            return Err(CdprError::EmptyBatch);
        }
        self.return_norm.update(returns.iter().map(std::slice::from_ref));
        let (mu, sd) = self.scale();
        let targets: Vec<f64> = returns.iter().map(|r| (r - mu) / sd).collect();
        let mut idx: Vec<usize> = (0..obs.len()).collect();
        let mut last = 0.0;
        for _ in 0..epochs {
            shuffle(&mut idx, rng);
            let mut total = 0.0;
            for chunk in idx.chunks(minibatch.max(1)) {
                let (loss, grad) = self.loss_grad(obs, &targets, chunk)?;
                total += loss * chunk.len() as f64;
                self.opt.step(&mut self.params.0, &grad, lr);
            }
            last = total / obs.len() as f64;
        }
        Ok(last)
    }

    fn loss_grad(&self, obs: &[Vec<f64>], targets: &[f64], idx: &[usize]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let n = idx.len() as f64;
        for &i in idx {
            let cache = forward_cached(&self.net, &self.params, &obs[i])?;
            let err = cache.output()[0] - targets[i];
            loss += err * err / n;
            backward_cached(&self.net, &self.params, &cache, &[2.0 * err / n], &mut grad, None)?;
        }
        Ok((loss, grad))
    }
}

pub(crate) fn shuffle<T, R: Rng + ?Sized>(v: &mut [T], rng: &mut R) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

/// Drives the plant with a policy's deterministic action, using the next
/// reference point as the target.
#[derive(Debug, Clone)]
pub struct PolicyController {
    pub policy: Policy,
    label: String,
}

impl PolicyController {
    pub fn new(policy: Policy) -> Self {
        Self {
            policy,
            label: "policy".into(),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

impl Controller for PolicyController {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn reset(&mut self) {}

    fn command(&mut self, input: &ControlInput<'_>) -> Result<CableTensions> {
        let target = input.next_reference.position;
        let tv = (self.policy.obs_dim() == EXTENDED_OBS_DIM).then_some(&input.next_reference.velocity);
        let obs = Observation::build(input.state, &target, tv);
        let action = self.policy.act_deterministic(obs.as_slice())?;
        crate::env::action_to_tensions(&self.policy.action_spec, &action, input.params.max_tension)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = Policy::stochastic(9, &[8], ActionSpec::Continuous, -0.5, &mut rng).unwrap();
        let mut flat = p.flat_params();
        assert_eq!(flat.len(), p.net.param_count() + 4);
        flat.0[0] = 3.0;
        *flat.0.last_mut().unwrap() = -1.0;
        p.set_flat_params(&flat).unwrap();
        assert_eq!(p.flat_params(), flat);
        assert!(p.set_flat_params(&ParamVector::zeros(3)).is_err());
    }

    #[test]
    fn expanded_inputs_keep_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = Policy::stochastic(9, &[16, 16], ActionSpec::Discrete { levels: 5 }, 0.0, &mut rng).unwrap();
        p.net_params = p.net.init_params(&mut rng, 1.0);
        p.obs_norm.update([[1.0; 9].as_slice(), [3.0; 9].as_slice()]);
        let wide = p.expand_inputs(12).unwrap();
        let obs9: Vec<f64> = (0..9).map(|i| i as f64 * 0.3 - 1.0).collect();
        let mut obs12 = obs9.clone();
        obs12.extend([0.4, -0.2, 0.7]);
        let a = p.output(&p.normalize(&obs9)).unwrap();
        let b = wide.output(&wide.normalize(&obs12)).unwrap();
        assert_eq!(a, b);
        assert!(p.expand_inputs(5).is_err());
    }

    #[test]
    fn value_fit_reduces_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut vf = ValueFunction::new(2, &[16], &mut rng).unwrap();
        let obs: Vec<Vec<f64>> = (0..64).map(|i| vec![(i as f64 / 32.0) - 1.0, 0.5]).collect();
        let ret: Vec<f64> = obs.iter().map(|o| 100.0 + 20.0 * o[0]).collect();
        vf.fit(&obs, &ret, 300, 16, 3e-3, &mut rng).unwrap();
        for (o, r) in obs.iter().zip(&ret) {
            assert!((vf.predict(o).unwrap() - r).abs() < 2.0);
        }
    }

    #[test]
    fn tension_bias_sets_the_mean_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut p = Policy::stochastic(9, &[8], ActionSpec::Continuous, -0.5, &mut rng).unwrap();
        p.net_params = ParamVector::zeros(p.net.param_count());
        p.bias_towards_tension(5.0, 20.0).unwrap();
        match p.act_deterministic(&[0.0; 9]).unwrap() {
            Action::Continuous(a) => assert!(a.iter().all(|x| (x + 0.5).abs() < 1e-12)),
            _ => panic!("expected continuous"),
        }
        let mut d = Policy::stochastic(9, &[8], ActionSpec::Discrete { levels: 5 }, 0.0, &mut rng).unwrap();
        d.net_params = ParamVector::zeros(d.net.param_count());
        d.bias_towards_tension(3.0, 20.0).unwrap();
        let out = d.output(&[0.0; 9]).unwrap();
        let lp = d.dist(&out).unwrap();
        // levels are 0, 5, 10, 15, 20 N: 3 N = 0.4 * 0 + 0.6 * 5
        let p0 = lp.log_prob(&SampledAction::Discrete(vec![0, 0, 0, 0])).unwrap();
        let p1 = lp.log_prob(&SampledAction::Discrete(vec![1, 1, 1, 1])).unwrap();
        assert!((p1 - p0 - 4.0 * (0.6f64 / 0.4).ln()).abs() < 1e-9);
    }

    #[test]
    fn deterministic_action_is_within_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Policy::deterministic(9, &[8], &mut rng).unwrap();
        match p.act_deterministic(&[50.0; 9]).unwrap() {
            Action::Continuous(a) => assert!(a.iter().all(|x| x.abs() <= 1.0)),
            _ => panic!("expected continuous"),
        }
    }
}
