//! Reinforcement learning from 3D point clouds versus 2D images.
//!
//! The crate bundles everything needed to train and analyse visual SAC/DrQ
//! agents on the 3D reacher bandit:
//!
//! * [`autodiff`]: a small tape-based reverse-mode differentiation engine,
//!   Adam, finite-difference checking and the checkpoint format.
//! * [`geometry`]: camera math and the point-cloud observation pipeline
//!   (back-projection, clipping, resampling, frame stacking, augmentation).
//! * [`env`]: the 3D reacher bandit and its analytic ray-casting renderer.
//! * [`nn`]: PointNet and CNN encoders, squashed-Gaussian actor, twin critic.
//! * [`sac`]: replay buffer, SAC and DrQ updates, and the training loop.
//! * [`harness`]: run configuration, robustness probe, contribution report,
//!   modality comparison and the gradient-check suite used by the CLI.

pub mod autodiff;
pub mod env;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod sac;

pub use error::{Error, Result};
