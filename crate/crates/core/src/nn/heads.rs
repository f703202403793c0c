use std::f64::consts::PI;

use crate::autodiff::{Float, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

use super::layers::Mlp;

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;
const TANH_GUARD: f64 = 1e-6;

/// Squashed Gaussian policy head: an MLP emitting mean and log-std per
/// action dimension; actions are `tanh(μ + σ·ε)·scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub mlp: Mlp,
    pub action_dim: usize,
    pub action_scale: f64,
}

/// Tape handles of a reparameterized draw.
#[derive(Debug, Clone, Copy)]
pub struct PolicySample {
    /// `[B, A]` scaled actions.
    pub action: Var,
    /// `[B]` log densities of `action`.
    pub log_prob: Var,
    /// `[B, A]` clamped log standard deviations.
    pub log_std: Var,
    /// `[B, A]` means before squashing.
    pub mean: Var,
}

impl Actor {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        prefix: &str,
        embed_dim: usize,
        hidden: &[usize],
        action_dim: usize,
        action_scale: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if !(action_scale > 0.0) {
            return Err(Error::Config(format!("action scale must be positive, got {action_scale}")));
        }
        let mlp = Mlp::new(store, &format!("{prefix}.mlp"), embed_dim, hidden, 2 * action_dim, rng)?;
        Ok(Actor {
            mlp,
            action_dim,
            action_scale,
        })
    }

    /// `(mean, clamped log-std)`, each `[B, A]`.
    pub fn distribution<'p, T: Float>(
        &self,
        tape: &mut Tape<'p, T>,
        store: &'p ParamStore<T>,
        features: Var,
    ) -> Result<(Var, Var)> {
        let out = self.mlp.forward(tape, store, features)?;
        let mean = tape.slice_last(out, 0, self.action_dim)?;
        let raw = tape.slice_last(out, self.action_dim, self.action_dim)?;
        let log_std = tape.clamp(raw, LOG_STD_MIN, LOG_STD_MAX)?;
        Ok((mean, log_std))
    }

    /// Reparameterized sample with the given standard-normal noise `[B·A]`.
    pub fn sample_with_noise<'p, T: Float>(
        &self,
        tape: &mut Tape<'p, T>,
        store: &'p ParamStore<T>,
        features: Var,
        noise: &[T],
    ) -> Result<PolicySample> {
        let (mean, log_std) = self.distribution(tape, store, features)?;
        let b = tape.shape(mean)[0];
        let a = self.action_dim;
        if noise.len() != b * a {
            return Err(Error::dim(format!("{} noise values for a {b}×{a} action batch", noise.len())));
        }
        let eps = tape.constant(&[b, a], noise.to_vec())?;
        let std = tape.exp(log_std)?;
        let spread = tape.mul(std, eps)?;
        let pre = tape.add(mean, spread)?;
        let squashed = tape.tanh(pre)?;
        let action = tape.scale(squashed, self.action_scale)?;

        // log N(pre; μ, σ) = −ε²/2 − log σ − log(2π)/2, then the tanh and scale Jacobians
        let sq = tape.square(squashed)?;
        let neg = tape.neg(sq)?;
        let jac = tape.add_const(neg, 1.0 + TANH_GUARD)?;
        let log_jac = tape.log(jac)?;
        let per_dim = tape.add(log_std, log_jac)?;
        let summed = tape.sum_last(per_dim)?;
        let negated = tape.neg(summed)?;
        let offset = -(a as f64) * (0.5 * (2.0 * PI).ln() + self.action_scale.ln());
        let consts: Vec<T> = noise
            .chunks(a)
            .map(|e| T::of(offset - 0.5 * e.iter().map(|v| v.f64() * v.f64()).sum::<f64>()))
            .collect();
        let consts = tape.constant(&[b], consts)?;
        let log_prob = tape.add(negated, consts)?;
        Ok(PolicySample {
            action,
            log_prob,
            log_std,
            mean,
        })
    }

    /// Deterministic action `tanh(μ)·scale`.
    pub fn mean_action<'p, T: Float>(
        &self,
        tape: &mut Tape<'p, T>,
        store: &'p ParamStore<T>,
        features: Var,
    ) -> Result<Var> {
        let (mean, _) = self.distribution(tape, store, features)?;
        let t = tape.tanh(mean)?;
        tape.scale(t, self.action_scale)
    }
}

/// Twin Q heads on `concat(features, action / scale)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub q1: Mlp,
    pub q2: Mlp,
    pub action_dim: usize,
    pub action_scale: f64,
}

impl Critic {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        prefix: &str,
        embed_dim: usize,
        hidden: &[usize],
        action_dim: usize,
        action_scale: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let q1 = Mlp::new(store, &format!("{prefix}.q1"), embed_dim + action_dim, hidden, 1, rng)?;
        let q2 = Mlp::new(store, &format!("{prefix}.q2"), embed_dim + action_dim, hidden, 1, rng)?;
        Ok(Critic {
            q1,
            q2,
            action_dim,
            action_scale,
        })
    }

    /// `(q1, q2)`, each `[B]`.
    pub fn forward<'p, T: Float>(
        &self,
        tape: &mut Tape<'p, T>,
        store: &'p ParamStore<T>,
        features: Var,
        action: Var,
    ) -> Result<(Var, Var)> {
        let a = tape.scale(action, 1.0 / self.action_scale)?;
        let x = tape.concat_last(&[features, a])?;
        let q1 = self.q1.forward(tape, store, x)?;
        let q2 = self.q2.forward(tape, store, x)?;
        Ok((tape.sum_last(q1)?, tape.sum_last(q2)?))
    }
}
