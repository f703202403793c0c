//! Soft actor-critic with clipped double-Q, learned temperature and
//! dual-rate target updates; the DrQ augmentation-averaging variant; the
//! replay buffer and the training loop.

mod agent;
mod batch;
mod buffer;
mod config;
mod losscheck;
mod train;

pub use agent::{soft_update, Agent, UpdateMetrics, UpdateRngs, LOG_ALPHA, TARGET_PREFIX};
pub use batch::{input_shape, normal_noise, obs_tensor};
pub use buffer::{stack_observations, FrameStack, ReplayBuffer, Transition};
pub use config::{AgentConfig, Algorithm, Augmentation, DrqSpec, SacHyper};
pub use losscheck::{check_actor_loss, check_critic_loss, LossProbe};
pub use train::{
    build_agent, evaluate, metrics_csv, net_spec, train, train_with, MetricsRow, RunSettings, TrainOutcome,
    METRICS_FILE, METRICS_HEADER,
};

#[cfg(test)]
mod tests;
