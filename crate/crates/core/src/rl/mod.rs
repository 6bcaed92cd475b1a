//! Learners: trust-region and clipped on-policy methods, and a deterministic
//! actor-critic.

pub mod ddpg;
pub mod gae;
pub mod policy;
pub mod ppo;
pub mod rollout;
pub mod schedule;
pub mod train;
pub mod trpo;

pub use ddpg::{DdpgAgent, DdpgConfig, ReplayBuffer, Transition};
pub use gae::{gae_advantages, standardize, GaeConfig};
pub use policy::{Policy, PolicyController, ValueFunction};
pub use ppo::{clipped_surrogate, ppo_update, PpoConfig, PpoReport};
pub use rollout::{Collector, EpisodeSummary, RolloutBatch};
pub use schedule::{cosine_warmup_lr, LrSchedule};
pub use train::{
    evaluate_policy, hover_tension, random_action, run_episodes, train, Algorithm, EnvSetup, MetricsRow, TrainConfig,
    TrainOutput,
};
pub use trpo::{conjugate_gradient, trpo_update, TrpoConfig, TrpoReport};
