//! Simulation, control and learning for a four-cable parallel robot that
//! positions a point mass inside a rectangular frame.

// Validation is written as `!(x > 0.0)` so NaN is rejected too; dense
// numeric loops index several arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod control;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod geometry;
pub mod neural;
pub mod persist;
pub mod report;
pub mod rl;
pub mod tension;
pub mod trajectory;

pub use config::ExperimentConfig;
pub use control::{tune_gains, GainGrid, PidController, PidGains};
pub use dynamics::{DynamicsParams, EndEffectorState};
pub use env::{Action, ActionSpec, CdprEnv, EpisodeConfig, Observation, RewardConfig, StartSampling};
pub use error::{CdprError, Result};
pub use geometry::{Pose, RobotGeometry, Vec3};
pub use persist::{load_policy, save_policy, ArtifactBatch, PolicyMeta};
pub use rl::{Algorithm, EnvSetup, Policy, TrainConfig};
pub use tension::CableTensions;
pub use trajectory::{track, TrackingResult, TrajectoryKind, TrajectorySpec};
