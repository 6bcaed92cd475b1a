//! Small MLP engine with exact gradients and policy heads.

pub mod adam;
pub mod heads;
pub mod mlp;
pub mod norm;

pub use adam::{clip_grad_norm, Adam};
pub use heads::{kl_divergence, ActionDist, HeadGrad, HeadKind, SampledAction, LOG_STD_MAX, LOG_STD_MIN};
pub use mlp::{
    backward, backward_cached, flatten, forward, forward_cached, jvp_cached, unflatten, Activation, ForwardCache,
    Layer, MlpSpec, ParamVector, DEFAULT_HIDDEN,
};
pub use norm::RunningNorm;
