//! Action distributions on top of network outputs.
//!
//! * Squashed Gaussian: the network emits the mean `mu` of a diagonal
//!   Gaussian over a pre-squash variable `u`; the log standard deviation is a
//!   separate state-independent parameter vector clamped to
//!   `[LOG_STD_MIN, LOG_STD_MAX]`. Actions are `a = tanh(u)`, which maps onto
//!   the open interval `(-1, 1)`. By change of variables
//!
//!   ```text
//!   log p(a) = log N(u; mu, sigma) - sum_i log(1 - tanh(u_i)^2)
//!   log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u))
//!   ```
//!
//!   The second form stays finite for large `|u|`. KL divergence and entropy
//!   differences are unaffected by the bijective squash, so both are computed
//!   on `u`.
//! * Factored categorical: one softmax group of `levels` logits per cable.
//! * Deterministic: `a = tanh(output)`, used by the DDPG actor.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CdprError, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const LN_2PI: f64 = 1.8378770664093453;
const LN_2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    SquashedGaussian { dim: usize },
    Categorical { groups: usize, levels: usize },
    Deterministic { dim: usize },
}

impl HeadKind {
    pub fn net_output_dim(&self) -> usize {
        match *self {
            HeadKind::SquashedGaussian { dim } | HeadKind::Deterministic { dim } => dim,
            HeadKind::Categorical { groups, levels } => groups * levels,
        }
    }

    /// Learnable parameters owned by the head itself (the log std vector).
    pub fn extra_params(&self) -> usize {
        match *self {
            HeadKind::SquashedGaussian { dim } => dim,
            _ => 0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            HeadKind::SquashedGaussian { .. } => "squashed_gaussian",
            HeadKind::Categorical { .. } => "categorical",
            HeadKind::Deterministic { .. } => "deterministic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampledAction {
    /// `raw` is the pre-squash Gaussian draw; `squashed = tanh(raw)`.
    Continuous {
        raw: Vec<f64>,
        squashed: Vec<f64>,
    },
    Discrete(Vec<usize>),
}

impl SampledAction {
    pub fn from_raw(raw: Vec<f64>) -> Self {
        let squashed = raw.iter().map(|u| u.tanh()).collect();
        SampledAction::Continuous { raw, squashed }
    }
}

pub fn clamp_log_std(s: f64) -> f64 {
    s.clamp(LOG_STD_MIN, LOG_STD_MAX)
}

/// `log(1 - tanh(u)^2)`, stable for large `|u|`.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// A distribution instance: head kind plus the network output and log std.
#[derive(Debug, Clone, Copy)]
pub struct ActionDist<'a> {
    pub head: HeadKind,
    pub output: &'a [f64],
    pub log_std: &'a [f64],
}

/// Gradients of a scalar with respect to the network output and the log std.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad {
    pub output: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl<'a> ActionDist<'a> {
    pub fn new(head: HeadKind, output: &'a [f64], log_std: &'a [f64]) -> Result<Self> {
        if output.len() != head.net_output_dim() {
            return Err(CdprError::DimensionMismatch {
                expected: head.net_output_dim(),
                found: output.len(),
            });
        }
        if log_std.len() != head.extra_params() {
            return Err(CdprError::DimensionMismatch {
                expected: head.extra_params(),
                found: log_std.len(),
            });
        }
        Ok(Self { head, output, log_std })
    }

    fn group_log_probs(&self, levels: usize) -> impl Iterator<Item = Vec<f64>> + '_ {
        self.output.chunks_exact(levels).map(log_softmax)
    }

    pub fn log_prob(&self, action: &SampledAction) -> Result<f64> {
        match (self.head, action) {
            (HeadKind::SquashedGaussian { dim }, SampledAction::Continuous { raw, .. }) if raw.len() == dim => {
                let mut lp = 0.0;
                for i in 0..dim {
                    let s = clamp_log_std(self.log_std[i]);
                    let z = (raw[i] - self.output[i]) * (-s).exp();
                    lp += -0.5 * z * z - s - 0.5 * LN_2PI - log_one_minus_tanh_sq(raw[i]);
                }
                Ok(lp)
            }
            (HeadKind::Categorical { groups, levels }, SampledAction::Discrete(a)) if a.len() == groups => {
                let mut lp = 0.0;
                for (logp, &l) in self.group_log_probs(levels).zip(a) {
                    if l >= levels {
                        return Err(CdprError::ActionOutOfSupport(format!("level {l} >= {levels}")));
                    }
                    lp += logp[l];
                }
                Ok(lp)
            }
            _ => Err(CdprError::ActionOutOfSupport(format!(
                "action {action:?} does not belong to a {} head",
                self.head.name()
            ))),
        }
    }

    /// Log density of an already-squashed continuous action in `(-1, 1)`.
    pub fn log_prob_squashed(&self, action: &[f64]) -> Result<f64> {
        if let Some(a) = action.iter().find(|a| !(a.abs() < 1.0)) {
            return Err(CdprError::ActionOutOfSupport(format!("{a} outside (-1, 1)")));
        }
        let raw = action.iter().map(|a| a.atanh()).collect();
        self.log_prob(&SampledAction::Continuous {
            raw,
            squashed: action.to_vec(),
        })
    }

    pub fn log_prob_grad(&self, action: &SampledAction) -> Result<HeadGrad> {
        match (self.head, action) {
            (HeadKind::SquashedGaussian { dim }, SampledAction::Continuous { raw, .. }) if raw.len() == dim => {
                let mut g_out = vec![0.0; dim];
                let mut g_std = vec![0.0; dim];
                for i in 0..dim {
                    let s = clamp_log_std(self.log_std[i]);
                    let inv_var = (-2.0 * s).exp();
                    let diff = raw[i] - self.output[i];
                    g_out[i] = diff * inv_var;
                    if (LOG_STD_MIN..=LOG_STD_MAX).contains(&self.log_std[i]) {
                        g_std[i] = diff * diff * inv_var - 1.0;
                    }
                }
                Ok(HeadGrad {
                    output: g_out,
                    log_std: g_std,
                })
            }
            (HeadKind::Categorical { groups, levels }, SampledAction::Discrete(a)) if a.len() == groups => {
                let mut g = Vec::with_capacity(groups * levels);
                for (logp, &l) in self.group_log_probs(levels).zip(a) {
                    g.extend(logp.iter().enumerate().map(|(j, lp)| {
                        let onehot = if j == l { 1.0 } else { 0.0 };
                        onehot - lp.exp()
                    }));
                }
                Ok(HeadGrad {
                    output: g,
                    log_std: vec![],
                })
            }
            _ => Err(CdprError::ActionOutOfSupport(format!(
                "action {action:?} does not belong to a {} head",
                self.head.name()
            ))),
        }
    }

    /// Entropy of the pre-squash Gaussian or of the factored categorical.
    pub fn entropy(&self) -> f64 {
        match self.head {
            HeadKind::SquashedGaussian { .. } => self
                .log_std
                .iter()
                .map(|s| clamp_log_std(*s) + 0.5 * (LN_2PI + 1.0))
                .sum(),
            HeadKind::Categorical { levels, .. } => self
                .group_log_probs(levels)
                .map(|lp| -lp.iter().map(|l| l.exp() * l).sum::<f64>())
                .sum(),
            HeadKind::Deterministic { .. } => 0.0,
        }
    }

    pub fn entropy_grad(&self) -> HeadGrad {
        match self.head {
            HeadKind::SquashedGaussian { dim } => HeadGrad {
                output: vec![0.0; dim],
                log_std: self
                    .log_std
                    .iter()
                    .map(|s| {
                        if (LOG_STD_MIN..=LOG_STD_MAX).contains(s) {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect(),
            },
            HeadKind::Categorical { levels, .. } => {
                let mut g = Vec::with_capacity(self.output.len());
                for lp in self.group_log_probs(levels) {
                    let h = -lp.iter().map(|l| l.exp() * l).sum::<f64>();
                    g.extend(lp.iter().map(|l| -l.exp() * (l + h)));
                }
                HeadGrad {
                    output: g,
                    log_std: vec![],
                }
            }
            HeadKind::Deterministic { dim } => HeadGrad {
                output: vec![0.0; dim],
                log_std: vec![],
            },
        }
    }

    /// Product of the Fisher metric (Hessian of `KL(self || other)` at
    /// `other = self`) with a tangent in (output, log std) coordinates.
    pub fn fisher_apply(&self, d_output: &[f64], d_log_std: &[f64]) -> HeadGrad {
        match self.head {
            HeadKind::SquashedGaussian { .. } => HeadGrad {
                output: d_output
                    .iter()
                    .zip(self.log_std)
                    .map(|(v, s)| v * (-2.0 * clamp_log_std(*s)).exp())
                    .collect(),
                log_std: d_log_std.iter().map(|v| 2.0 * v).collect(),
            },
            HeadKind::Categorical { levels, .. } => {
                let mut out = Vec::with_capacity(self.output.len());
                for (lp, v) in self.group_log_probs(levels).zip(d_output.chunks_exact(levels)) {
                    let p: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
                    let pv: f64 = p.iter().zip(v).map(|(a, b)| a * b).sum();
                    out.extend(p.iter().zip(v).map(|(pi, vi)| pi * (vi - pv)));
                }
                HeadGrad {
                    output: out,
                    log_std: vec![],
                }
            }
            HeadKind::Deterministic { dim } => HeadGrad {
                output: vec![0.0; dim],
                log_std: vec![],
            },
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SampledAction {
        match self.head {
            HeadKind::SquashedGaussian { dim } => {
                let raw = (0..dim)
                    .map(|i| {
                        let z: f64 = StandardNormal.sample(rng);
                        self.output[i] + clamp_log_std(self.log_std[i]).exp() * z
                    })
                    .collect();
                SampledAction::from_raw(raw)
            }
            HeadKind::Categorical { levels, .. } => SampledAction::Discrete(
                self.group_log_probs(levels)
                    .map(|lp| {
                        let u: f64 = rng.random();
                        let mut acc = 0.0;
                        for (j, l) in lp.iter().enumerate() {
                            acc += l.exp();
                            if u < acc {
                                return j;
                            }
                        }
                        levels - 1
                    })
                    .collect(),
            ),
            HeadKind::Deterministic { .. } => self.mode(),
        }
    }

    /// Most likely action: `tanh(mean)` or the per-group argmax.
    pub fn mode(&self) -> SampledAction {
        match self.head {
            HeadKind::SquashedGaussian { .. } | HeadKind::Deterministic { .. } => {
                SampledAction::from_raw(self.output.to_vec())
            }
            HeadKind::Categorical { levels, .. } => SampledAction::Discrete(
                self.output
                    .chunks_exact(levels)
                    .map(|g| {
                        let mut best = 0;
                        for (j, z) in g.iter().enumerate() {
                            if *z > g[best] {
                                best = j;
                            }
                        }
                        best
                    })
                    .collect(),
            ),
        }
    }
}

/// `KL(old || new)`, closed form. Both distributions must share a head kind.
pub fn kl_divergence(old: &ActionDist<'_>, new: &ActionDist<'_>) -> f64 {
    match (old.head, new.head) {
        (HeadKind::SquashedGaussian { dim }, HeadKind::SquashedGaussian { .. }) => (0..dim)
            .map(|i| {
                let s0 = clamp_log_std(old.log_std[i]);
                let s1 = clamp_log_std(new.log_std[i]);
                let dm = old.output[i] - new.output[i];
                s1 - s0 + ((2.0 * s0).exp() + dm * dm) / (2.0 * (2.0 * s1).exp()) - 0.5
            })
            .sum(),
        (HeadKind::Categorical { levels, .. }, HeadKind::Categorical { .. }) => old
            .group_log_probs(levels)
            .zip(new.group_log_probs(levels))
            .map(|(lp, lq)| lp.iter().zip(&lq).map(|(p, q)| p.exp() * (p - q)).sum::<f64>())
            .sum(),
        _ => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const CAT: HeadKind = HeadKind::Categorical { groups: 4, levels: 5 };

    #[test]
    fn uniform_categorical_log_prob() {
        let logits = [0.0; 20];
        let d = ActionDist::new(CAT, &logits, &[]).unwrap();
        let lp = d.log_prob(&SampledAction::Discrete(vec![0, 1, 2, 4])).unwrap();
        assert!((lp - 4.0 * (0.2f64).ln()).abs() < 1e-12);
        assert!((lp + 6.437751649736401).abs() < 1e-12);
    }

    #[test]
    fn gaussian_log_prob_at_origin() {
        let head = HeadKind::SquashedGaussian { dim: 1 };
        let d = ActionDist::new(head, &[0.0], &[0.0]).unwrap();
        let lp = d.log_prob_squashed(&[0.0]).unwrap();
        assert!((lp + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        assert!((lp + 0.9189385332046727).abs() < 1e-12);
        assert!(matches!(
            d.log_prob_squashed(&[1.0]),
            Err(CdprError::ActionOutOfSupport(_))
        ));
    }

    #[test]
    fn categorical_probabilities_enumerate_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let logits: Vec<f64> = (0..20).map(|_| rng.random_range(-3.0..3.0)).collect();
        let d = ActionDist::new(CAT, &logits, &[]).unwrap();
        let mut total = 0.0;
        for code in 0..625 {
            let a: Vec<usize> = (0..4).map(|k| (code / 5usize.pow(k)) % 5).collect();
            total += d.log_prob(&SampledAction::Discrete(a)).unwrap().exp();
        }
        assert!((total - 1.0).abs() < 1e-12);
        assert!(d.log_prob(&SampledAction::Discrete(vec![0, 0, 0, 5])).is_err());
    }

    #[test]
    fn kl_examples() {
        let g = HeadKind::SquashedGaussian { dim: 1 };
        let a = ActionDist::new(g, &[0.0], &[0.0]).unwrap();
        let b = ActionDist::new(g, &[1.0], &[0.0]).unwrap();
        assert_eq!(kl_divergence(&a, &a), 0.0);
        assert!((kl_divergence(&a, &b) - 0.5).abs() < 1e-15);

        let c = HeadKind::Categorical { groups: 1, levels: 2 };
        let p = [0.0, 0.0];
        let q = [(0.9f64).ln(), (0.1f64).ln()];
        let dp = ActionDist::new(c, &p, &[]).unwrap();
        let dq = ActionDist::new(c, &q, &[]).unwrap();
        // direct sum p ln(p/q): 0.5108256237659907
        assert!((kl_divergence(&dp, &dq) - 0.5108256237659907).abs() < 1e-12);
        assert!(kl_divergence(&dp, &dp).abs() < 1e-15);
    }

    #[test]
    fn narrow_gaussian_samples_near_squashed_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let head = HeadKind::SquashedGaussian { dim: 4 };
        let mean = [0.3, -0.2, 1.5, 0.0];
        let d = ActionDist::new(head, &mean, &[-5.0; 4]).unwrap();
        // sigma = e^-5 ~ 0.0067: mean deviation is well under 0.01 and no
        // draw strays past ~6 sigma
        let mut total = 0.0;
        for _ in 0..1000 {
            let SampledAction::Continuous { squashed, .. } = d.sample(&mut rng) else {
                unreachable!()
            };
            for (a, m) in squashed.iter().zip(mean) {
                let dev = (a - m.tanh()).abs();
                assert!(dev < 0.04);
                total += dev;
            }
        }
        assert!(total / 4000.0 < 0.01);
    }

    #[test]
    fn one_hot_logits_always_sampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut logits = [0.0; 20];
        for g in 0..4 {
            logits[g * 5 + 3] = 30.0;
        }
        let d = ActionDist::new(CAT, &logits, &[]).unwrap();
        for _ in 0..1000 {
            assert_eq!(d.sample(&mut rng), SampledAction::Discrete(vec![3; 4]));
        }
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let logits = [0.0; 20];
        let d = ActionDist::new(CAT, &logits, &[]).unwrap();
        let mut counts = [0usize; 5];
        let n = 100_000;
        for _ in 0..n {
            let SampledAction::Discrete(a) = d.sample(&mut rng) else {
                unreachable!()
            };
            counts[a[0]] += 1;
        }
        // binomial std at p = 0.2, n = 1e5 is ~0.0013; 0.01 is over 7 sigma
        for c in counts {
            assert!((c as f64 / n as f64 - 0.2).abs() < 0.01);
        }
    }

    fn check_grad(head: HeadKind, out: &[f64], log_std: &[f64], action: &SampledAction) {
        let d = ActionDist::new(head, out, log_std).unwrap();
        let g = d.log_prob_grad(action).unwrap();
        let h = 1e-6;
        let f = |o: &[f64], s: &[f64]| ActionDist::new(head, o, s).unwrap().log_prob(action).unwrap();
        for i in 0..out.len() {
            let (mut a, mut b) = (out.to_vec(), out.to_vec());
            a[i] += h;
            b[i] -= h;
            let fd = (f(&a, log_std) - f(&b, log_std)) / (2.0 * h);
            assert!((fd - g.output[i]).abs() <= 1e-4 * fd.abs().max(1e-3));
        }
        for i in 0..log_std.len() {
            let (mut a, mut b) = (log_std.to_vec(), log_std.to_vec());
            a[i] += h;
            b[i] -= h;
            let fd = (f(out, &a) - f(out, &b)) / (2.0 * h);
            assert!((fd - g.log_std[i]).abs() <= 1e-4 * fd.abs().max(1e-3));
        }
    }

    #[test]
    fn log_prob_gradients() {
        let g = HeadKind::SquashedGaussian { dim: 4 };
        check_grad(
            g,
            &[0.1, -0.4, 0.9, 0.0],
            &[-0.5, 0.2, -1.0, 0.0],
            &SampledAction::from_raw(vec![0.3, -1.2, 0.5, 2.0]),
        );
        let logits: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        check_grad(CAT, &logits, &[], &SampledAction::Discrete(vec![1, 4, 0, 2]));
    }

    #[test]
    fn entropy_gradient_matches_differences() {
        let logits: Vec<f64> = (0..20).map(|i| (i as f64 * 0.61).cos()).collect();
        let d = ActionDist::new(CAT, &logits, &[]).unwrap();
        let g = d.entropy_grad();
        for i in 0..20 {
            let (mut a, mut b) = (logits.clone(), logits.clone());
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (ActionDist::new(CAT, &a, &[]).unwrap().entropy()
                - ActionDist::new(CAT, &b, &[]).unwrap().entropy())
                / 2e-6;
            assert!((fd - g.output[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn fisher_is_kl_hessian() {
        // second directional derivative of KL(p || p + t v) at t = 0
        let check = |head: HeadKind, out: Vec<f64>, s: Vec<f64>, v_out: Vec<f64>, v_s: Vec<f64>| {
            let d = ActionDist::new(head, &out, &s).unwrap();
            let fv = d.fisher_apply(&v_out, &v_s);
            let quad: f64 = fv.output.iter().zip(&v_out).map(|(a, b)| a * b).sum::<f64>()
                + fv.log_std.iter().zip(&v_s).map(|(a, b)| a * b).sum::<f64>();
            let h = 1e-4;
            let shifted = |t: f64| {
                let o: Vec<f64> = out.iter().zip(&v_out).map(|(a, b)| a + t * b).collect();
                let ss: Vec<f64> = s.iter().zip(&v_s).map(|(a, b)| a + t * b).collect();
                kl_divergence(&d, &ActionDist::new(head, &o, &ss).unwrap())
            };
            let second = (shifted(h) - 2.0 * shifted(0.0) + shifted(-h)) / (h * h);
            assert!((second - quad).abs() < 1e-5 * quad.abs().max(1.0), "{second} vs {quad}");
        };
        check(
            HeadKind::SquashedGaussian { dim: 2 },
            vec![0.2, -0.3],
            vec![-0.4, 0.1],
            vec![1.0, -0.5],
            vec![0.3, 0.7],
        );
        check(
            HeadKind::Categorical { groups: 2, levels: 3 },
            vec![0.1, 0.5, -0.2, 1.0, 0.0, -1.0],
            vec![],
            vec![0.3, -0.1, 0.2, 0.5, -0.5, 0.1],
            vec![],
        );
    }

    #[test]
    fn stable_squash_correction() {
        for u in [-40.0f64, -3.0, -0.5, 0.0, 0.7, 5.0, 40.0] {
            let direct = (1.0 - u.tanh().powi(2)).ln();
            let stable = log_one_minus_tanh_sq(u);
            assert!(stable.is_finite());
            if direct.is_finite() {
                assert!((direct - stable).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mode_is_argmax_or_tanh_mean() {
        let d = ActionDist::new(
            HeadKind::Categorical { groups: 2, levels: 3 },
            &[0.0, 2.0, 1.0, 5.0, 0.0, 0.0],
            &[],
        )
        .unwrap();
        assert_eq!(d.mode(), SampledAction::Discrete(vec![1, 0]));
        let g = ActionDist::new(HeadKind::SquashedGaussian { dim: 1 }, &[0.5], &[0.0]).unwrap();
        assert_eq!(g.mode(), SampledAction::from_raw(vec![0.5]));
    }
}
