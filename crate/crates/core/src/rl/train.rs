//! Training loops for the three learners, with per-iteration metrics.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{static_equilibrium_tensions, DynamicsParams};
use crate::env::{curriculum_reset_distribution, Action, ActionSpec, CdprEnv, EpisodeConfig, RewardConfig};
use crate::error::{CdprError, Result};
use crate::geometry::{RobotGeometry, NUM_CABLES};
use crate::neural::{Adam, DEFAULT_HIDDEN};
use crate::rl::ddpg::{DdpgAgent, DdpgConfig, Transition};
use crate::rl::gae::{gae_advantages, standardize, GaeConfig};
use crate::rl::policy::{to_env_action, Policy, ValueFunction};
use crate::rl::ppo::{ppo_update, PpoConfig};
use crate::rl::rollout::{Collector, EpisodeSummary};
use crate::rl::schedule::{cosine_warmup_lr, LrSchedule};
use crate::rl::trpo::{trpo_update, TrpoConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Trpo,
    Ppo,
    Ddpg,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Trpo => "trpo",
            Algorithm::Ppo => "ppo",
            Algorithm::Ddpg => "ddpg",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "trpo" => Ok(Algorithm::Trpo),
            "ppo" => Ok(Algorithm::Ppo),
            "ddpg" => Ok(Algorithm::Ddpg),
            other => Err(CdprError::config(
                "algorithm.name",
                format!("unknown algorithm {other:?}"),
            )),
        }
    }
}

/// Everything needed to build the training environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSetup {
    pub geometry: RobotGeometry,
    pub dynamics: DynamicsParams,
    pub action_spec: ActionSpec,
    pub reward: RewardConfig,
    pub episode: EpisodeConfig,
}

impl EnvSetup {
    pub fn new(geometry: RobotGeometry) -> Self {
        Self {
            reward: RewardConfig::for_geometry(&geometry),
            geometry,
            dynamics: DynamicsParams::default(),
            action_spec: ActionSpec::Continuous,
            episode: EpisodeConfig::default(),
        }
    }

    pub fn make_env(&self, seed: u64) -> Result<CdprEnv> {
        CdprEnv::new(
            self.geometry.clone(),
            self.dynamics,
            self.action_spec,
            self.reward,
            EpisodeConfig {
                rng_seed: seed,
                ..self.episode
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    pub steps_per_iteration: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup_fraction: f64,
    pub gae: GaeConfig,
    pub value_epochs: usize,
    pub value_minibatch: usize,
    pub trpo: TrpoConfig,
    pub ppo: PpoConfig,
    pub ddpg: DdpgConfig,
    /// Iterations per curriculum stage; zero samples starts uniformly.
    pub curriculum_iterations: usize,
    /// Start fresh policies at the static hover tension.
    pub hover_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Trpo,
            hidden: DEFAULT_HIDDEN.to_vec(),
            init_log_std: -0.5,
            steps_per_iteration: 2048,
            lr_max: 1e-3,
            lr_min: 1e-5,
            warmup_fraction: 0.05,
            gae: GaeConfig::default(),
            value_epochs: 5,
            value_minibatch: 64,
            trpo: TrpoConfig::default(),
            ppo: PpoConfig::default(),
            ddpg: DdpgConfig::default(),
            curriculum_iterations: 0,
            hover_init: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_iteration == 0 {
            return Err(CdprError::config("algorithm.steps_per_iteration", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(CdprError::config("algorithm.warmup_fraction", "must be in [0, 1)"));
        }
        if self.value_epochs == 0 || self.value_minibatch == 0 {
            return Err(CdprError::config("algorithm.value_epochs", "must be positive"));
        }
        self.gae.validate()?;
        self.trpo.validate()?;
        self.ppo.validate()?;
        self.ddpg.validate()
    }

    pub fn schedule(&self, budget: usize) -> LrSchedule {
        LrSchedule {
            lr_max: self.lr_max,
            lr_min: self.lr_min,
            warmup_steps: (self.warmup_fraction * budget as f64) as usize,
            total_steps: budget.max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub env_steps: usize,
    pub mean_episode_reward: f64,
    pub mean_episode_length: f64,
    pub kl: f64,
    pub lr: f64,
    pub success_rate: f64,
    /// False when a trust-region step was rejected and the policy kept.
    pub update_accepted: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub policy: Policy,
    pub metrics: Vec<MetricsRow>,
}

/// Recent completed episodes, for smoothed metrics.
#[derive(Debug, Clone, Default)]
struct EpisodeWindow(VecDeque<EpisodeSummary>);

impl EpisodeWindow {
    const SIZE: usize = 100;

    fn extend(&mut self, eps: &[EpisodeSummary]) {
        for e in eps {
            if self.0.len() == Self::SIZE {
                self.0.pop_front();
            }
            self.0.push_back(*e);
        }
    }

    fn means(&self) -> (f64, f64, f64) {
        if self.0.is_empty() {
            return (f64::NAN, f64::NAN, f64::NAN);
        }
        let n = self.0.len() as f64;
        (
            self.0.iter().map(|e| e.reward).sum::<f64>() / n,
            self.0.iter().map(|e| e.length as f64).sum::<f64>() / n,
            self.0.iter().filter(|e| e.success).count() as f64 / n,
        )
    }
}

fn apply_curriculum(env: &mut CdprEnv, cfg: &TrainConfig, base: &EpisodeConfig, iteration: usize) {
    if cfg.curriculum_iterations == 0 {
        return;
    }
    let stage = iteration / cfg.curriculum_iterations;
    let next = curriculum_reset_distribution(stage, base, env.geometry());
    env.set_start_sampling(next.start_sampling);
}

/// Runs `budget` environment steps of training. `on_iteration` sees every
/// metrics row with the current policy and may abort training with an error.
pub fn train(
    setup: &EnvSetup,
    cfg: &TrainConfig,
    budget: usize,
    seed: u64,
    init: Option<Policy>,
    on_iteration: &mut dyn FnMut(&MetricsRow, &Policy) -> Result<()>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if budget == 0 {
        return Err(CdprError::config("algorithm.budget", "must be positive"));
    }
    match cfg.algorithm {
        Algorithm::Trpo | Algorithm::Ppo => train_on_policy(setup, cfg, budget, seed, init, on_iteration),
        Algorithm::Ddpg => train_ddpg(setup, cfg, budget, seed, init, on_iteration),
    }
}

/// Mean cable tension holding the mass still at the workspace center.
pub fn hover_tension(setup: &EnvSetup) -> Result<f64> {
    let (t, _) = static_equilibrium_tensions(&setup.geometry, &setup.dynamics, &setup.geometry.workspace_center())?;
    Ok(t.0.iter().sum::<f64>() / NUM_CABLES as f64)
}

fn fit_init(init: Option<Policy>, obs_dim: usize) -> Result<Option<Policy>> {
    init.map(|p| {
        if p.obs_dim() == obs_dim {
            Ok(p)
        } else {
            p.expand_inputs(obs_dim)
        }
    })
    .transpose()
}

fn train_on_policy(
    setup: &EnvSetup,
    cfg: &TrainConfig,
    budget: usize,
    seed: u64,
    init: Option<Policy>,
    on_iteration: &mut dyn FnMut(&MetricsRow, &Policy) -> Result<()>,
) -> Result<TrainOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let env = setup.make_env(seed)?;
    let obs_dim = env.obs_dim();
    let mut policy = match fit_init(init, obs_dim)? {
        Some(p) if p.action_spec == setup.action_spec => p,
        Some(_) => {
            return Err(CdprError::config(
                "action.mode",
                "initial policy has a different action mode",
            ))
        }
        None => {
            let mut p = Policy::stochastic(obs_dim, &cfg.hidden, setup.action_spec, cfg.init_log_std, &mut rng)?;
            if cfg.hover_init {
                p.bias_towards_tension(hover_tension(setup)?, setup.dynamics.max_tension)?;
            }
            p
        }
    };
    let mut value = ValueFunction::new(obs_dim, &cfg.hidden, &mut rng)?;
    let mut opt = Adam::new(policy.param_count());
    let schedule = cfg.schedule(budget);
    let mut collector = Collector::new(env);
    let mut window = EpisodeWindow::default();
    let mut metrics = Vec::new();
    let mut steps = 0;
    let mut iteration = 0;

    while steps < budget {
        apply_curriculum(&mut collector.env, cfg, &setup.episode, iteration);
        let n = cfg.steps_per_iteration.min(budget - steps);
        let batch = collector.collect(&policy, &value, n, &mut rng)?;
        steps += n;
        let lr = cosine_warmup_lr(&schedule, steps);
        let (adv, returns) = gae_advantages(&batch, &cfg.gae)?;
        let adv = standardize(&adv);
        let (kl, update_accepted) = match cfg.algorithm {
            Algorithm::Trpo => {
                let r = trpo_update(
                    &mut policy,
                    &batch.observations,
                    &batch.actions,
                    &batch.log_probs,
                    &adv,
                    &cfg.trpo,
                )?;
                (r.kl, r.accepted)
            }
            _ => {
                let r = ppo_update(
                    &mut policy,
                    &mut opt,
                    &batch.observations,
                    &batch.actions,
                    &batch.log_probs,
                    &adv,
                    &cfg.ppo,
                    lr,
                    &mut rng,
                )?;
                (r.kl, true)
            }
        };
        if !kl.is_finite() || !policy.net_params.is_finite() || policy.log_std.iter().any(|s| !s.is_finite()) {
            return Err(CdprError::NonFinite(format!("policy update at iteration {iteration}")));
        }
        value.fit(
            &batch.observations,
            &returns,
            cfg.value_epochs,
            cfg.value_minibatch,
            lr,
            &mut rng,
        )?;
        policy
            .obs_norm
            .update(batch.raw_observations.iter().map(|o| o.as_slice()));

        window.extend(&batch.completed);
        let (reward, length, success) = window.means();
        let row = MetricsRow {
            iteration,
            env_steps: steps,
            mean_episode_reward: reward,
            mean_episode_length: length,
            kl,
            lr,
            success_rate: success,
            update_accepted,
        };
        on_iteration(&row, &policy)?;
        metrics.push(row);
        iteration += 1;
    }
    Ok(TrainOutput { policy, metrics })
}

fn train_ddpg(
    setup: &EnvSetup,
    cfg: &TrainConfig,
    budget: usize,
    seed: u64,
    init: Option<Policy>,
    on_iteration: &mut dyn FnMut(&MetricsRow, &Policy) -> Result<()>,
) -> Result<TrainOutput> {
    if setup.action_spec != ActionSpec::Continuous {
        return Err(CdprError::config("action.mode", "ddpg needs continuous actions"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = setup.make_env(seed)?;
    let obs_dim = env.obs_dim();
    let d = &cfg.ddpg;
    let mut agent = DdpgAgent::new(obs_dim, &cfg.hidden, d.buffer_capacity, &mut rng)?;
    if cfg.hover_init {
        agent
            .actor
            .bias_towards_tension(hover_tension(setup)?, setup.dynamics.max_tension)?;
        agent.actor_target = agent.actor.net_params.clone();
    }
    if let Some(p) = fit_init(init, obs_dim)? {
        if p.net != agent.actor.net {
            return Err(CdprError::config(
                "algorithm.hidden",
                "initial policy has a different network shape",
            ));
        }
        agent.actor_target = p.net_params.clone();
        agent.actor = p;
    }
    let schedule = cfg.schedule(budget);
    let mut window = EpisodeWindow::default();
    let mut metrics = Vec::new();
    let mut obs = env.reset();
    let (mut ep_reward, mut ep_len) = (0.0, 0);
    let mut iteration = 0;
    let mut finished = Vec::new();
    for step in 0..budget {
        if cfg.curriculum_iterations > 0 && step % cfg.steps_per_iteration == 0 {
            apply_curriculum(&mut env, cfg, &setup.episode, iteration);
        }
        let action: Vec<f64> = if step < d.learning_starts {
            (0..NUM_CABLES).map(|_| rng.random_range(-1.0..=1.0)).collect()
        } else {
            agent.explore(obs.as_slice(), d.exploration_std, &mut rng)?
        };
        let arr: [f64; NUM_CABLES] = [action[0], action[1], action[2], action[3]];
        let result = env.step(&Action::Continuous(arr))?;
        agent.actor.obs_norm.update([obs.as_slice()]);
        agent.replay.push(Transition {
            obs: obs.0.clone(),
            action,
            reward: result.reward,
            next_obs: result.observation.0.clone(),
            terminated: result.terminated,
        });
        ep_reward += result.reward;
        ep_len += 1;
        if result.done() {
            finished.push(EpisodeSummary {
                reward: ep_reward,
                length: ep_len,
                success: result.terminated,
            });
            ep_reward = 0.0;
            ep_len = 0;
            obs = env.reset();
        } else {
            obs = result.observation;
        }

        let lr = cosine_warmup_lr(&schedule, step + 1);
        if step + 1 >= d.learning_starts && agent.replay.len() >= d.batch_size {
            let report = agent.update(d, lr, lr * d.critic_lr_ratio, &mut rng)?;
            if !report.critic_loss.is_finite() || !agent.actor.net_params.is_finite() {
                return Err(CdprError::NonFinite(format!("ddpg update at step {}", step + 1)));
            }
        }
        if (step + 1) % cfg.steps_per_iteration == 0 || step + 1 == budget {
            window.extend(&finished);
            finished.clear();
            let (reward, length, success) = window.means();
            let row = MetricsRow {
                iteration,
                env_steps: step + 1,
                mean_episode_reward: reward,
                mean_episode_length: length,
                kl: 0.0,
                lr,
                success_rate: success,
                update_accepted: true,
            };
            on_iteration(&row, &agent.actor)?;
            metrics.push(row);
            iteration += 1;
        }
    }
    Ok(TrainOutput {
        policy: agent.actor,
        metrics,
    })
}

/// Rolls out `episodes` episodes choosing actions with `act`.
pub fn run_episodes<F>(env: &mut CdprEnv, episodes: usize, mut act: F) -> Result<Vec<EpisodeSummary>>
where
    F: FnMut(&[f64]) -> Result<Action>,
{
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset();
        let (mut reward, mut length) = (0.0, 0);
        loop {
            let r = env.step(&act(obs.as_slice())?)?;
            reward += r.reward;
            length += 1;
            if r.done() {
                out.push(EpisodeSummary {
                    reward,
                    length,
                    success: r.terminated,
                });
                break;
            }
            obs = r.observation;
        }
    }
    Ok(out)
}

/// Rolls out a trained policy on a fresh environment seeded with `seed`,
/// sampling from it when `stochastic` and taking its mode otherwise.
pub fn evaluate_policy(
    setup: &EnvSetup,
    policy: &Policy,
    episodes: usize,
    seed: u64,
    stochastic: bool,
) -> Result<Vec<EpisodeSummary>> {
    let mut env = setup.make_env(seed)?;
    if env.obs_dim() != policy.obs_dim() {
        return Err(CdprError::DimensionMismatch {
            expected: env.obs_dim(),
            found: policy.obs_dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run_episodes(&mut env, episodes, |obs| {
        if stochastic {
            let (a, _) = policy.sample(&policy.normalize(obs), &mut rng)?;
            to_env_action(&a)
        } else {
            policy.act_deterministic(obs)
        }
    })
}

/// Uniformly random actions for the given action spec.
pub fn random_action<R: Rng + ?Sized>(spec: &ActionSpec, rng: &mut R) -> Action {
    match spec {
        ActionSpec::Continuous => Action::Continuous(std::array::from_fn(|_| rng.random_range(-1.0..=1.0))),
        ActionSpec::Discrete { levels } => Action::Discrete(std::array::from_fn(|_| rng.random_range(0..*levels))),
    }
}
