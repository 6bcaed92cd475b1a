//! Episodic reach task around the cable robot dynamics.
//!
//! Observations are `[position, velocity, target]` (9 values) or
//! `[position, velocity, target, target_velocity]` (12 values). Actions are
//! four cable commands, either continuous in `[-1, 1]` or discrete levels,
//! mapped affinely onto `[0, max_tension]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{step, DynamicsParams, EndEffectorState};
use crate::error::{CdprError, Result};
use crate::geometry::{RobotGeometry, Vec3, NUM_CABLES};
use crate::tension::CableTensions;

pub const BASE_OBS_DIM: usize = 9;
pub const EXTENDED_OBS_DIM: usize = 12;

/// Start radius of curriculum stage 0.
pub const CURRICULUM_BASE_RADIUS: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn build(state: &EndEffectorState, target: &Vec3, target_velocity: Option<&Vec3>) -> Self {
        let mut v = Vec::with_capacity(EXTENDED_OBS_DIM);
        v.extend_from_slice(state.position.as_slice());
        v.extend_from_slice(state.velocity.as_slice());
        v.extend_from_slice(target.as_slice());
        if let Some(tv) = target_velocity {
            v.extend_from_slice(tv.as_slice());
        }
        Observation(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSpec {
    Continuous,
    Discrete { levels: usize },
}

impl ActionSpec {
    pub const DEFAULT_LEVELS: usize = 5;

    pub fn validate(&self) -> Result<()> {
        match self {
            ActionSpec::Discrete { levels } if *levels < 2 => {
                Err(CdprError::config("env.levels", "need at least 2 levels"))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ActionSpec::Continuous => "continuous",
            ActionSpec::Discrete { .. } => "discrete",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    Continuous([f64; NUM_CABLES]),
    Discrete([usize; NUM_CABLES]),
}

pub fn action_to_tensions(spec: &ActionSpec, action: &Action, max_tension: f64) -> Result<CableTensions> {
    match (spec, action) {
        (ActionSpec::Continuous, Action::Continuous(a)) => {
            if let Some(x) = a.iter().find(|x| !(-1.0..=1.0).contains(*x)) {
                return Err(CdprError::ActionOutOfBounds(format!("{x} outside [-1, 1]")));
            }
            Ok(CableTensions(a.map(|x| (x + 1.0) * 0.5 * max_tension)))
        }
        (ActionSpec::Discrete { levels }, Action::Discrete(a)) => {
            if let Some(l) = a.iter().find(|l| **l >= *levels) {
                return Err(CdprError::ActionOutOfBounds(format!("level {l} >= {levels}")));
            }
            let top = (*levels - 1) as f64;
            Ok(CableTensions(a.map(|l| l as f64 / top * max_tension)))
        }
        _ => Err(CdprError::ActionOutOfBounds(
            "action kind does not match the action spec".into(),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    pub w_improve: f64,
    pub w_prox: f64,
    /// Distance at which the proximity term reaches zero, m.
    pub norm_distance: f64,
    /// Paid once on the step that reaches the success radius.
    pub success_bonus: f64,
}

impl RewardConfig {
    /// Weights 50 and 5, proximity normalized by the frame diagonal.
    pub fn for_geometry(geom: &RobotGeometry) -> Self {
        Self {
            w_improve: 50.0,
            w_prox: 5.0,
            norm_distance: geom.frame_diagonal(),
            success_bonus: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_improve >= 0.0) || !(self.w_prox >= 0.0) || !(self.success_bonus >= 0.0) {
            return Err(CdprError::config("reward", "weights must be nonnegative"));
        }
        if !(self.norm_distance > 0.0) {
            return Err(CdprError::config("reward.norm_distance", "must be positive"));
        }
        Ok(())
    }
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self::for_geometry(&RobotGeometry::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardTerms {
    pub improvement: f64,
    pub proximity: f64,
    pub bonus: f64,
}

impl RewardTerms {
    pub fn total(&self) -> f64 {
        self.improvement + self.proximity + self.bonus
    }
}

pub fn reward_terms(cfg: &RewardConfig, d_prev: f64, d_curr: f64) -> RewardTerms {
    RewardTerms {
        improvement: cfg.w_improve * (d_prev - d_curr),
        proximity: cfg.w_prox * (1.0 - (d_curr / cfg.norm_distance).min(1.0)),
        bonus: 0.0,
    }
}

/// Distance-improvement plus proximity reward (no success bonus).
pub fn reward(cfg: &RewardConfig, d_prev: f64, d_curr: f64) -> f64 {
    reward_terms(cfg, d_prev, d_curr).total()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StartSampling {
    UniformInWorkspace,
    NearTarget { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    pub success_radius: f64,
    pub start_sampling: StartSampling,
    pub include_target_velocity: bool,
    pub rng_seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: 200,
            success_radius: 0.05,
            start_sampling: StartSampling::UniformInWorkspace,
            include_target_velocity: false,
            rng_seed: 0,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps < 1 {
            return Err(CdprError::config("episode.max_steps", "must be at least 1"));
        }
        if !(self.success_radius > 0.0) {
            return Err(CdprError::config("episode.success_radius", "must be positive"));
        }
        if let StartSampling::NearTarget { radius } = self.start_sampling {
            if !(radius > 0.0) {
                return Err(CdprError::config("episode.start_radius", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        if self.include_target_velocity {
            EXTENDED_OBS_DIM
        } else {
            BASE_OBS_DIM
        }
    }
}

/// Near-target sampling whose radius grows linearly with the stage, capped at
/// the workspace diagonal.
pub fn curriculum_reset_distribution(stage: usize, base: &EpisodeConfig, geom: &RobotGeometry) -> EpisodeConfig {
    let radius = (CURRICULUM_BASE_RADIUS * (1 + stage) as f64).min(geom.workspace_diagonal());
    EpisodeConfig {
        start_sampling: StartSampling::NearTarget { radius },
        ..*base
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terms: RewardTerms,
    pub terminated: bool,
    pub truncated: bool,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

#[derive(Debug, Clone)]
struct Episode {
    state: EndEffectorState,
    target: Vec3,
    distance: f64,
    steps: usize,
    finished: bool,
}

#[derive(Debug, Clone)]
pub struct CdprEnv {
    geom: RobotGeometry,
    dynamics: DynamicsParams,
    action_spec: ActionSpec,
    reward_cfg: RewardConfig,
    episode_cfg: EpisodeConfig,
    rng: ChaCha8Rng,
    episode: Option<Episode>,
}

impl CdprEnv {
    pub fn new(
        geom: RobotGeometry,
        dynamics: DynamicsParams,
        action_spec: ActionSpec,
        reward_cfg: RewardConfig,
        episode_cfg: EpisodeConfig,
    ) -> Result<Self> {
        dynamics.validate()?;
        action_spec.validate()?;
        reward_cfg.validate()?;
        episode_cfg.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(episode_cfg.rng_seed),
            geom,
            dynamics,
            action_spec,
            reward_cfg,
            episode_cfg,
            episode: None,
        })
    }

    pub fn geometry(&self) -> &RobotGeometry {
        &self.geom
    }

    pub fn dynamics(&self) -> &DynamicsParams {
        &self.dynamics
    }

    pub fn action_spec(&self) -> ActionSpec {
        self.action_spec
    }

    pub fn episode_config(&self) -> &EpisodeConfig {
        &self.episode_cfg
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward_cfg
    }

    pub fn obs_dim(&self) -> usize {
        self.episode_cfg.obs_dim()
    }

    /// Swap the start distribution; takes effect on the next reset.
    pub fn set_start_sampling(&mut self, sampling: StartSampling) {
        self.episode_cfg.start_sampling = sampling;
    }

    pub fn state(&self) -> Option<&EndEffectorState> {
        self.episode.as_ref().map(|e| &e.state)
    }

    pub fn target(&self) -> Option<Vec3> {
        self.episode.as_ref().map(|e| e.target)
    }

    pub fn distance(&self) -> Option<f64> {
        self.episode.as_ref().map(|e| e.distance)
    }

    fn uniform_point(&mut self) -> Vec3 {
        let lo = self.geom.workspace_min();
        let hi = self.geom.workspace_max();
        Vec3::from_fn(|k, _| self.rng.random_range(lo[k]..=hi[k]))
    }

    fn point_near(&mut self, center: &Vec3, radius: f64) -> Vec3 {
        for _ in 0..64 {
            let offset = Vec3::from_fn(|_, _| self.rng.random_range(-radius..=radius));
            if offset.norm() > radius {
                continue;
            }
            let p = center + offset;
            if self.geom.workspace_contains(&p) {
                return p;
            }
        }
        // Projection onto the box never moves a point farther from `center`.
        let offset = Vec3::from_fn(|_, _| self.rng.random_range(-radius..=radius));
        let p = center + offset.normalize() * offset.norm().min(radius);
        self.geom.clamp_to_workspace(&p)
    }

    pub fn reset(&mut self) -> Observation {
        let target = self.uniform_point();
        let start = match self.episode_cfg.start_sampling {
            StartSampling::UniformInWorkspace => self.uniform_point(),
            StartSampling::NearTarget { radius } => self.point_near(&target, radius),
        };
        self.reset_to(EndEffectorState::at_rest(start), target)
    }

    /// Start an episode from an explicit state and target.
    pub fn reset_to(&mut self, state: EndEffectorState, target: Vec3) -> Observation {
        let episode = Episode {
            distance: (state.position - target).norm(),
            state,
            target,
            steps: 0,
            finished: false,
        };
        let obs = self.observe(&episode);
        self.episode = Some(episode);
        obs
    }

    fn observe(&self, episode: &Episode) -> Observation {
        let zero = Vec3::zeros();
        let tv = self.episode_cfg.include_target_velocity.then_some(&zero);
        Observation::build(&episode.state, &episode.target, tv)
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult> {
        let tensions = action_to_tensions(&self.action_spec, action, self.dynamics.max_tension)?;
        let mut episode = match self.episode.take() {
            Some(e) if !e.finished => e,
            other => {
                self.episode = other;
                return Err(CdprError::StepBeforeReset);
            }
        };
        let next = match step(&self.geom, &self.dynamics, &episode.state, &tensions) {
            Ok(s) => s,
            Err(e) => {
                self.episode = Some(episode);
                return Err(e);
            }
        };
        let d_prev = episode.distance;
        let d_curr = (next.position - episode.target).norm();
        episode.state = next;
        episode.distance = d_curr;
        episode.steps += 1;

        // An episode that starts inside the success radius ends on its first step.
        let radius = self.episode_cfg.success_radius;
        let terminated = d_curr <= radius || d_prev <= radius;
        let truncated = episode.steps >= self.episode_cfg.max_steps;
        let mut terms = reward_terms(&self.reward_cfg, d_prev, d_curr);
        if terminated {
            terms.bonus = self.reward_cfg.success_bonus;
        }
        episode.finished = terminated || truncated;

        let observation = self.observe(&episode);
        self.episode = Some(episode);
        Ok(StepResult {
            observation,
            reward: terms.total(),
            terms,
            terminated,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env_with(episode: EpisodeConfig, spec: ActionSpec) -> CdprEnv {
        let geom = RobotGeometry::default();
        CdprEnv::new(
            geom.clone(),
            DynamicsParams::default(),
            spec,
            RewardConfig::for_geometry(&geom),
            episode,
        )
        .unwrap()
    }

    #[test]
    fn continuous_action_map() {
        let s = ActionSpec::Continuous;
        let t = action_to_tensions(&s, &Action::Continuous([-1.0; 4]), 20.0).unwrap();
        assert_eq!(t.0, [0.0; 4]);
        let t = action_to_tensions(&s, &Action::Continuous([0.0; 4]), 20.0).unwrap();
        assert_eq!(t.0, [10.0; 4]);
        assert!(action_to_tensions(&s, &Action::Continuous([1.1, 0.0, 0.0, 0.0]), 20.0).is_err());
        assert!(action_to_tensions(&s, &Action::Discrete([0; 4]), 20.0).is_err());
    }

    #[test]
    fn discrete_action_map() {
        let s = ActionSpec::Discrete { levels: 5 };
        let t = action_to_tensions(&s, &Action::Discrete([4, 0, 2, 1]), 20.0).unwrap();
        assert_eq!(t.0, [20.0, 0.0, 10.0, 5.0]);
        assert!(matches!(
            action_to_tensions(&s, &Action::Discrete([5, 0, 0, 0]), 20.0),
            Err(CdprError::ActionOutOfBounds(_))
        ));
    }

    #[test]
    fn reward_examples() {
        let cfg = RewardConfig::default();
        let nd = cfg.norm_distance;
        assert!(reward(&cfg, nd, nd).abs() < 1e-12);
        // direct evaluation of the formula: 9.58831174849566
        assert!((reward(&cfg, 0.5, 0.4) - 9.58831174849566).abs() < 1e-9);
        assert!((reward(&cfg, 0.7, 0.0) - (50.0 * 0.7 + 5.0)).abs() < 1e-12);
    }

    #[test]
    fn reward_decreases_with_distance() {
        let cfg = RewardConfig::default();
        let mut last = f64::INFINITY;
        for k in 0..60 {
            let r = reward(&cfg, 1.0, k as f64 * 0.1);
            assert!(r < last);
            last = r;
        }
    }

    #[test]
    fn same_seed_same_reset() {
        let cfg = EpisodeConfig {
            rng_seed: 42,
            ..Default::default()
        };
        let a = env_with(cfg, ActionSpec::Continuous).reset();
        let b = env_with(cfg, ActionSpec::Continuous).reset();
        assert_eq!(a, b);
        assert_eq!(a.len(), 9);
    }

    #[test]
    fn near_target_radius_respected() {
        let cfg = EpisodeConfig {
            start_sampling: StartSampling::NearTarget { radius: 0.2 },
            ..Default::default()
        };
        let mut env = env_with(cfg, ActionSpec::Continuous);
        for _ in 0..2000 {
            let o = env.reset();
            let p = Vec3::new(o.0[0], o.0[1], o.0[2]);
            let t = Vec3::new(o.0[6], o.0[7], o.0[8]);
            assert!((p - t).norm() <= 0.2 + 1e-12);
            assert!(env.geometry().workspace_contains(&p));
            assert!(env.geometry().workspace_contains(&t));
            assert_eq!(&o.0[3..6], &[0.0; 3]);
        }
    }

    #[test]
    fn start_at_target_terminates() {
        let mut env = env_with(EpisodeConfig::default(), ActionSpec::Continuous);
        let p = env.geometry().workspace_center();
        env.reset_to(EndEffectorState::at_rest(p), p);
        let r = env.step(&Action::Continuous([1.0; 4])).unwrap();
        assert!(r.terminated);
        assert!(matches!(
            env.step(&Action::Continuous([0.0; 4])),
            Err(CdprError::StepBeforeReset)
        ));
    }

    #[test]
    fn step_before_reset() {
        let mut env = env_with(EpisodeConfig::default(), ActionSpec::Continuous);
        assert!(matches!(
            env.step(&Action::Continuous([0.0; 4])),
            Err(CdprError::StepBeforeReset)
        ));
    }

    #[test]
    fn falling_reduces_reward() {
        let mut env = env_with(EpisodeConfig::default(), ActionSpec::Continuous);
        let p = Vec3::new(1.155, 1.405, 2.0);
        env.reset_to(EndEffectorState::at_rest(p), p + Vec3::new(0.0, 0.0, 0.1));
        let mut rewards = vec![];
        for _ in 0..5 {
            rewards.push(env.step(&Action::Continuous([-1.0; 4])).unwrap().reward);
        }
        assert!(rewards.windows(2).all(|w| w[1] < w[0]));
        assert!(rewards[4] < 0.0);
    }

    #[test]
    fn truncates_at_max_steps() {
        let cfg = EpisodeConfig {
            max_steps: 3,
            ..Default::default()
        };
        let mut env = env_with(cfg, ActionSpec::Discrete { levels: 5 });
        let p = Vec3::new(1.155, 1.405, 1.5);
        env.reset_to(EndEffectorState::at_rest(p), p + Vec3::new(0.5, 0.0, 0.0));
        let flags: Vec<_> = (0..3)
            .map(|_| env.step(&Action::Discrete([1; 4])).unwrap().truncated)
            .collect();
        assert_eq!(flags, [false, false, true]);
    }

    #[test]
    fn extended_observation() {
        let cfg = EpisodeConfig {
            include_target_velocity: true,
            ..Default::default()
        };
        let mut env = env_with(cfg, ActionSpec::Continuous);
        assert_eq!(env.reset().len(), 12);
        assert_eq!(env.step(&Action::Continuous([0.0; 4])).unwrap().observation.len(), 12);
    }

    #[test]
    fn curriculum_schedule() {
        let geom = RobotGeometry::default();
        let base = EpisodeConfig::default();
        let radius = |s| match curriculum_reset_distribution(s, &base, &geom).start_sampling {
            StartSampling::NearTarget { radius } => radius,
            _ => unreachable!(),
        };
        assert!((radius(0) - 0.2).abs() < 1e-15);
        assert!((radius(1) - 0.4).abs() < 1e-15);
        assert!((radius(1000) - geom.workspace_diagonal()).abs() < 1e-15);
    }
}
