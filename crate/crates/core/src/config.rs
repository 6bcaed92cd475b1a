//! Experiment configuration: flat `section.key = value` text.
//!
//! Every key has a default, unknown keys are rejected, and [`ExperimentConfig::to_pairs`]
//! lists the fully resolved configuration in a fixed order for output headers.

use std::fmt::Display;
use std::str::FromStr;

use crate::control::{GainGrid, PidGains};
use crate::dynamics::DynamicsParams;
use crate::env::{ActionSpec, EpisodeConfig, RewardConfig, StartSampling};
use crate::error::{CdprError, Result};
use crate::geometry::{RobotGeometry, Vec3, FRAME_DEPTH, FRAME_HEIGHT, FRAME_WIDTH};
use crate::rl::{Algorithm, EnvSetup, TrainConfig};
use crate::trajectory::{TrajectoryKind, TrajectorySpec};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub frame: [f64; 3],
    pub workspace_min: Vec3,
    pub workspace_max: Vec3,
    pub dynamics: DynamicsParams,
    pub action: ActionSpec,
    /// Levels used when the action mode is switched to discrete.
    pub levels: usize,
    pub w_improve: f64,
    pub w_prox: f64,
    /// `None` uses the frame diagonal.
    pub norm_distance: Option<f64>,
    pub success_bonus: f64,
    pub episode: EpisodeConfig,
    pub train: TrainConfig,
    pub budget: usize,
    pub pid_grid: GainGrid,
    pub pid_gains: PidGains,
    pub integral_limit: f64,
    pub trajectory_center: Vec3,
    pub trajectory_radius: f64,
    pub trajectory_period: f64,
    pub z_rate: f64,
    pub radius_rate: f64,
    pub trajectory_duration: f64,
    pub sweep_dt: Vec<f64>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let circle = TrajectorySpec::circle();
        let geom = RobotGeometry::default();
        Self {
            frame: [FRAME_WIDTH, FRAME_DEPTH, FRAME_HEIGHT],
            workspace_min: geom.workspace_min(),
            workspace_max: geom.workspace_max(),
            dynamics: DynamicsParams::default(),
            action: ActionSpec::Continuous,
            levels: ActionSpec::DEFAULT_LEVELS,
            w_improve: 50.0,
            w_prox: 5.0,
            norm_distance: None,
            // Equal to the proximity reward forgone by ending an episode at
            // its first step, so reaching the target never pays less than hovering.
            success_bonus: 1000.0,
            episode: EpisodeConfig::default(),
            train: TrainConfig::default(),
            budget: 50_000,
            pid_grid: GainGrid::default(),
            pid_gains: PidGains::uniform(15.0, 0.5, 5.0),
            integral_limit: crate::control::DEFAULT_INTEGRAL_LIMIT,
            trajectory_center: circle.center,
            trajectory_radius: circle.radius,
            trajectory_period: circle.period,
            z_rate: TrajectorySpec::spiral_rising().rate,
            radius_rate: TrajectorySpec::spiral_shrinking().rate,
            trajectory_duration: circle.duration,
            sweep_dt: vec![0.05, 0.1, 0.2, 0.4],
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e: T::Err| CdprError::config(key, format!("cannot parse {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if value.trim().is_empty() {
        return Ok(vec![]);
    }
    value.split(',').map(|v| parse(key, v)).collect()
}

fn parse_vec3(key: &str, value: &str) -> Result<Vec3> {
    let v: Vec<f64> = parse_list(key, value)?;
    if v.len() != 3 {
        return Err(CdprError::config(key, "expected three comma-separated numbers"));
    }
    Ok(Vec3::new(v[0], v[1], v[2]))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(CdprError::config(key, format!("expected a boolean, got {other:?}"))),
    }
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn vec3(v: &Vec3) -> String {
    format!("{},{},{}", v.x, v.y, v.z)
}

impl ExperimentConfig {
    /// Parse configuration text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CdprError::config(
                    format!("line {}", lineno + 1),
                    format!("expected key = value, got {line:?}"),
                )
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "geometry.frame_width" => self.frame[0] = parse(key, value)?,
            "geometry.frame_depth" => self.frame[1] = parse(key, value)?,
            "geometry.frame_height" => self.frame[2] = parse(key, value)?,
            "geometry.workspace_min" => self.workspace_min = parse_vec3(key, value)?,
            "geometry.workspace_max" => self.workspace_max = parse_vec3(key, value)?,
            "dynamics.mass" => self.dynamics.mass = parse(key, value)?,
            "dynamics.gravity" => self.dynamics.gravity = parse(key, value)?,
            "dynamics.dt" => self.dynamics.dt = parse(key, value)?,
            "dynamics.max_tension" => self.dynamics.max_tension = parse(key, value)?,
            "action.mode" => self.set_action_mode(value)?,
            "action.levels" => {
                self.levels = parse(key, value)?;
                if let ActionSpec::Discrete { .. } = self.action {
                    self.action = ActionSpec::Discrete { levels: self.levels };
                }
            }
            "reward.w_improve" => self.w_improve = parse(key, value)?,
            "reward.w_prox" => self.w_prox = parse(key, value)?,
            "reward.norm_distance" => {
                self.norm_distance = if value == "auto" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "reward.success_bonus" => self.success_bonus = parse(key, value)?,
            "episode.max_steps" => self.episode.max_steps = parse(key, value)?,
            "episode.success_radius" => self.episode.success_radius = parse(key, value)?,
            "episode.start_radius" => {
                self.episode.start_sampling = if value == "uniform" {
                    StartSampling::UniformInWorkspace
                } else {
                    StartSampling::NearTarget {
                        radius: parse(key, value)?,
                    }
                }
            }
            "episode.include_target_velocity" => self.episode.include_target_velocity = parse_bool(key, value)?,
            "episode.curriculum_iterations" => t.curriculum_iterations = parse(key, value)?,
            "algorithm.name" => t.algorithm = Algorithm::parse(value)?,
            "algorithm.budget" => self.budget = parse(key, value)?,
            "algorithm.hidden" => t.hidden = parse_list(key, value)?,
            "algorithm.init_log_std" => t.init_log_std = parse(key, value)?,
            "algorithm.hover_init" => t.hover_init = parse_bool(key, value)?,
            "algorithm.steps_per_iteration" => t.steps_per_iteration = parse(key, value)?,
            "algorithm.lr_max" => t.lr_max = parse(key, value)?,
            "algorithm.lr_min" => t.lr_min = parse(key, value)?,
            "algorithm.warmup_fraction" => t.warmup_fraction = parse(key, value)?,
            "algorithm.gamma" => {
                t.gae.gamma = parse(key, value)?;
                t.ddpg.gamma = t.gae.gamma;
            }
            "algorithm.lam" => t.gae.lam = parse(key, value)?,
            "algorithm.value_epochs" => t.value_epochs = parse(key, value)?,
            "algorithm.value_minibatch" => t.value_minibatch = parse(key, value)?,
            "trpo.max_kl" => t.trpo.max_kl = parse(key, value)?,
            "trpo.cg_iters" => t.trpo.cg_iters = parse(key, value)?,
            "trpo.cg_damping" => t.trpo.cg_damping = parse(key, value)?,
            "trpo.backtrack_coeff" => t.trpo.backtrack_coeff = parse(key, value)?,
            "trpo.backtrack_iters" => t.trpo.backtrack_iters = parse(key, value)?,
            "ppo.clip_eps" => t.ppo.clip_eps = parse(key, value)?,
            "ppo.epochs" => t.ppo.epochs = parse(key, value)?,
            "ppo.minibatch" => t.ppo.minibatch = parse(key, value)?,
            "ppo.entropy_coef" => t.ppo.entropy_coef = parse(key, value)?,
            "ppo.max_grad_norm" => t.ppo.max_grad_norm = parse(key, value)?,
            "ddpg.tau" => t.ddpg.tau = parse(key, value)?,
            "ddpg.batch_size" => t.ddpg.batch_size = parse(key, value)?,
            "ddpg.buffer_capacity" => t.ddpg.buffer_capacity = parse(key, value)?,
            "ddpg.exploration_std" => t.ddpg.exploration_std = parse(key, value)?,
            "ddpg.learning_starts" => t.ddpg.learning_starts = parse(key, value)?,
            "ddpg.reward_scale" => t.ddpg.reward_scale = parse(key, value)?,
            "ddpg.critic_lr_ratio" => t.ddpg.critic_lr_ratio = parse(key, value)?,
            "pid.grid_kp" => self.pid_grid.kp = parse_list(key, value)?,
            "pid.grid_kd" => self.pid_grid.kd = parse_list(key, value)?,
            "pid.grid_ki" => self.pid_grid.ki = parse_list(key, value)?,
            "pid.kp" => self.pid_gains.kp = Vec3::repeat(parse(key, value)?),
            "pid.ki" => self.pid_gains.ki = Vec3::repeat(parse(key, value)?),
            "pid.kd" => self.pid_gains.kd = Vec3::repeat(parse(key, value)?),
            "pid.integral_limit" => self.integral_limit = parse(key, value)?,
            "trajectory.center" => self.trajectory_center = parse_vec3(key, value)?,
            "trajectory.radius" => self.trajectory_radius = parse(key, value)?,
            "trajectory.period" => self.trajectory_period = parse(key, value)?,
            "trajectory.z_rate" => self.z_rate = parse(key, value)?,
            "trajectory.radius_rate" => self.radius_rate = parse(key, value)?,
            "trajectory.duration" => self.trajectory_duration = parse(key, value)?,
            "sweep.dt" => self.sweep_dt = parse_list(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(CdprError::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn set_action_mode(&mut self, mode: &str) -> Result<()> {
        self.action = match mode {
            "continuous" => ActionSpec::Continuous,
            "discrete" => ActionSpec::Discrete { levels: self.levels },
            other => return Err(CdprError::config("action.mode", format!("unknown mode {other:?}"))),
        };
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let t = &self.train;
        let start = match self.episode.start_sampling {
            StartSampling::UniformInWorkspace => "uniform".to_string(),
            StartSampling::NearTarget { radius } => radius.to_string(),
        };
        let pairs: Vec<(&str, String)> = vec![
            ("geometry.frame_width", self.frame[0].to_string()),
            ("geometry.frame_depth", self.frame[1].to_string()),
            ("geometry.frame_height", self.frame[2].to_string()),
            ("geometry.workspace_min", vec3(&self.workspace_min)),
            ("geometry.workspace_max", vec3(&self.workspace_max)),
            ("dynamics.mass", self.dynamics.mass.to_string()),
            ("dynamics.gravity", self.dynamics.gravity.to_string()),
            ("dynamics.dt", self.dynamics.dt.to_string()),
            ("dynamics.max_tension", self.dynamics.max_tension.to_string()),
            ("action.mode", self.action.name().to_string()),
            ("action.levels", self.levels.to_string()),
            ("reward.w_improve", self.w_improve.to_string()),
            ("reward.w_prox", self.w_prox.to_string()),
            (
                "reward.norm_distance",
                self.norm_distance.map_or("auto".to_string(), |d| d.to_string()),
            ),
            ("reward.success_bonus", self.success_bonus.to_string()),
            ("episode.max_steps", self.episode.max_steps.to_string()),
            ("episode.success_radius", self.episode.success_radius.to_string()),
            ("episode.start_radius", start),
            (
                "episode.include_target_velocity",
                self.episode.include_target_velocity.to_string(),
            ),
            ("episode.curriculum_iterations", t.curriculum_iterations.to_string()),
            ("algorithm.name", t.algorithm.name().to_string()),
            ("algorithm.budget", self.budget.to_string()),
            ("algorithm.hidden", join(&t.hidden)),
            ("algorithm.init_log_std", t.init_log_std.to_string()),
            ("algorithm.hover_init", t.hover_init.to_string()),
            ("algorithm.steps_per_iteration", t.steps_per_iteration.to_string()),
            ("algorithm.lr_max", t.lr_max.to_string()),
            ("algorithm.lr_min", t.lr_min.to_string()),
            ("algorithm.warmup_fraction", t.warmup_fraction.to_string()),
            ("algorithm.gamma", t.gae.gamma.to_string()),
            ("algorithm.lam", t.gae.lam.to_string()),
            ("algorithm.value_epochs", t.value_epochs.to_string()),
            ("algorithm.value_minibatch", t.value_minibatch.to_string()),
            ("trpo.max_kl", t.trpo.max_kl.to_string()),
            ("trpo.cg_iters", t.trpo.cg_iters.to_string()),
            ("trpo.cg_damping", t.trpo.cg_damping.to_string()),
            ("trpo.backtrack_coeff", t.trpo.backtrack_coeff.to_string()),
            ("trpo.backtrack_iters", t.trpo.backtrack_iters.to_string()),
            ("ppo.clip_eps", t.ppo.clip_eps.to_string()),
            ("ppo.epochs", t.ppo.epochs.to_string()),
            ("ppo.minibatch", t.ppo.minibatch.to_string()),
            ("ppo.entropy_coef", t.ppo.entropy_coef.to_string()),
            ("ppo.max_grad_norm", t.ppo.max_grad_norm.to_string()),
            ("ddpg.tau", t.ddpg.tau.to_string()),
            ("ddpg.batch_size", t.ddpg.batch_size.to_string()),
            ("ddpg.buffer_capacity", t.ddpg.buffer_capacity.to_string()),
            ("ddpg.exploration_std", t.ddpg.exploration_std.to_string()),
            ("ddpg.learning_starts", t.ddpg.learning_starts.to_string()),
            ("ddpg.reward_scale", t.ddpg.reward_scale.to_string()),
            ("ddpg.critic_lr_ratio", t.ddpg.critic_lr_ratio.to_string()),
            ("pid.grid_kp", join(&self.pid_grid.kp)),
            ("pid.grid_kd", join(&self.pid_grid.kd)),
            ("pid.grid_ki", join(&self.pid_grid.ki)),
            ("pid.kp", self.pid_gains.kp.x.to_string()),
            ("pid.ki", self.pid_gains.ki.x.to_string()),
            ("pid.kd", self.pid_gains.kd.x.to_string()),
            ("pid.integral_limit", self.integral_limit.to_string()),
            ("trajectory.center", vec3(&self.trajectory_center)),
            ("trajectory.radius", self.trajectory_radius.to_string()),
            ("trajectory.period", self.trajectory_period.to_string()),
            ("trajectory.z_rate", self.z_rate.to_string()),
            ("trajectory.radius_rate", self.radius_rate.to_string()),
            ("trajectory.duration", self.trajectory_duration.to_string()),
            ("sweep.dt", join(&self.sweep_dt)),
            ("seed", self.seed.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// `key = value` lines that parse back to this configuration.
    pub fn to_text(&self) -> String {
        self.to_pairs().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn geometry(&self) -> Result<RobotGeometry> {
        RobotGeometry::from_frame(
            self.frame[0],
            self.frame[1],
            self.frame[2],
            self.workspace_min,
            self.workspace_max,
        )
    }

    pub fn reward(&self, geom: &RobotGeometry) -> RewardConfig {
        RewardConfig {
            w_improve: self.w_improve,
            w_prox: self.w_prox,
            norm_distance: self.norm_distance.unwrap_or_else(|| geom.frame_diagonal()),
            success_bonus: self.success_bonus,
        }
    }

    pub fn env_setup(&self) -> Result<EnvSetup> {
        let geometry = self.geometry()?;
        Ok(EnvSetup {
            reward: self.reward(&geometry),
            geometry,
            dynamics: self.dynamics,
            action_spec: self.action,
            episode: self.episode,
        })
    }

    pub fn trajectory(&self, kind: TrajectoryKind) -> TrajectorySpec {
        TrajectorySpec {
            kind,
            center: self.trajectory_center,
            radius: self.trajectory_radius,
            period: self.trajectory_period,
            rate: match kind {
                TrajectoryKind::Circle => 0.0,
                TrajectoryKind::SpiralRising => self.z_rate,
                TrajectoryKind::SpiralShrinking => self.radius_rate,
            },
            duration: self.trajectory_duration,
        }
    }

    pub fn trajectory_named(&self, name: &str) -> Result<TrajectorySpec> {
        let kind = TrajectorySpec::named(name)
            .ok_or_else(|| CdprError::config("trajectory", format!("unknown trajectory {name:?}")))?
            .kind;
        Ok(self.trajectory(kind))
    }

    /// Cross-field checks; every failure names its key.
    pub fn validate(&self) -> Result<()> {
        let geom = self.geometry()?;
        self.dynamics.validate()?;
        self.action.validate()?;
        self.reward(&geom).validate()?;
        self.episode.validate()?;
        self.train.validate()?;
        self.pid_gains.validate()?;
        if self.budget == 0 {
            return Err(CdprError::config("algorithm.budget", "must be positive"));
        }
        if !(self.integral_limit >= 0.0) {
            return Err(CdprError::config("pid.integral_limit", "must be nonnegative"));
        }
        if self.sweep_dt.iter().any(|d| !(*d > 0.0)) {
            return Err(CdprError::config("sweep.dt", "intervals must be positive"));
        }
        if !(self.trajectory_period > 0.0 && self.trajectory_duration > 0.0 && self.trajectory_radius >= 0.0) {
            return Err(CdprError::config("trajectory", "period and duration must be positive"));
        }
        Ok(())
    }
}
