//! Visual encoders and actor-critic heads built on the autodiff tape.

mod encoder;
mod heads;
mod init;
mod layers;

pub use encoder::{cnn_output_extent, Cnn, Conv, Encoder, PointNet, CNN_FILTERS, CNN_STRIDES};
pub use heads::{Actor, Critic, PolicySample, LOG_STD_MAX, LOG_STD_MIN};
pub use init::orthogonal;
pub use layers::{LayerNorm, Linear, Mlp, LN_EPS, RELU_GAIN};

use crate::autodiff::{Checkpoint, Float, ParamStore};
use crate::error::Result;
use crate::rng::{derive, seeded};

/// Shape of one encoder input sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputShape {
    /// `N × channels` point rows (3 coordinates plus features).
    Points { points: usize, channels: usize },
    /// `channels × height × width` image.
    Image { channels: usize, height: usize, width: usize },
}

impl InputShape {
    pub fn numel(&self) -> usize {
        match *self {
            InputShape::Points { points, channels } => points * channels,
            InputShape::Image { channels, height, width } => channels * height * width,
        }
    }

    /// Batch tensor shape for `b` samples.
    pub fn batch_shape(&self, b: usize) -> Vec<usize> {
        match *self {
            InputShape::Points { points, channels } => vec![b, points, channels],
            InputShape::Image { channels, height, width } => vec![b, channels, height, width],
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    pub input: InputShape,
    pub point_widths: Vec<usize>,
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    pub action_dim: usize,
    pub action_scale: f64,
}

/// Online networks, each in its own parameter store so that gradients and
/// optimizers stay separate.
#[derive(Debug)]
pub struct Networks<T> {
    pub encoder: Encoder,
    pub actor: Actor,
    pub critic: Critic,
    pub encoder_params: ParamStore<T>,
    pub actor_params: ParamStore<T>,
    pub critic_params: ParamStore<T>,
}

impl<T: Float> Clone for Networks<T> {
    fn clone(&self) -> Self {
        self.cast()
    }
}

impl<T: Float> Networks<T> {
    /// Deterministic in `seed`; each module draws from its own derived stream.
    pub fn new(spec: &NetSpec, seed: u64) -> Result<Self> {
        let mut encoder_params = ParamStore::new();
        let mut actor_params = ParamStore::new();
        let mut critic_params = ParamStore::new();
        let mut rng = seeded(derive(seed, 1));
        let encoder = match spec.input {
            InputShape::Points { channels, .. } => Encoder::PointNet(PointNet::new(
                &mut encoder_params,
                "encoder",
                channels,
                &spec.point_widths,
                spec.embed_dim,
                &mut rng,
            )?),
            InputShape::Image { channels, height, width } => Encoder::Cnn(Cnn::new(
                &mut encoder_params,
                "encoder",
                channels,
                height,
                width,
                spec.embed_dim,
                &mut rng,
            )?),
        };
        let actor = Actor::new(
            &mut actor_params,
            "actor",
            spec.embed_dim,
            &spec.hidden,
            spec.action_dim,
            spec.action_scale,
            &mut seeded(derive(seed, 2)),
        )?;
        let critic = Critic::new(
            &mut critic_params,
            "critic",
            spec.embed_dim,
            &spec.hidden,
            spec.action_dim,
            spec.action_scale,
            &mut seeded(derive(seed, 3)),
        )?;
        Ok(Networks {
            encoder,
            actor,
            critic,
            encoder_params,
            actor_params,
            critic_params,
        })
    }

    pub fn push_to(&self, ckpt: &mut Checkpoint, prefix: &str) -> Result<()> {
        ckpt.push_store(prefix, &self.encoder_params)?;
        ckpt.push_store(prefix, &self.actor_params)?;
        ckpt.push_store(prefix, &self.critic_params)
    }

    pub fn load_from(&mut self, ckpt: &Checkpoint, prefix: &str) -> Result<()> {
        ckpt.load_into(prefix, &mut self.encoder_params)?;
        ckpt.load_into(prefix, &mut self.actor_params)?;
        ckpt.load_into(prefix, &mut self.critic_params)
    }

    pub fn cast<U: Float>(&self) -> Networks<U> {
        Networks {
            encoder: self.encoder.clone(),
            actor: self.actor.clone(),
            critic: self.critic.clone(),
            encoder_params: self.encoder_params.cast(),
            actor_params: self.actor_params.cast(),
            critic_params: self.critic_params.cast(),
        }
    }
}
