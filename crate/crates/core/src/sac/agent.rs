use super::batch::{normal_noise, obs_tensor};
use super::buffer::{ReplayBuffer, Transition};
use super::config::{Augmentation, DrqSpec, SacHyper};
use crate::autodiff::{AdamState, Checkpoint, Float, Gradients, ParamStore, Tape, Tensor, Var};
use crate::env::Observation;
use crate::error::{Error, Result};
use crate::nn::{InputShape, NetSpec, Networks};
use crate::rng::{stream, Rng, Stream};

pub const TARGET_PREFIX: &str = "target.";
pub const LOG_ALPHA: &str = "log_alpha";

/// Generators consumed by the update step.
#[derive(Debug, Clone)]
pub struct UpdateRngs {
    pub buffer: Rng,
    pub noise: Rng,
    pub augmentation: Rng,
}

impl UpdateRngs {
    pub fn from_seed(seed: u64) -> Self {
        UpdateRngs {
            buffer: stream(seed, Stream::BufferSampling),
            noise: stream(seed, Stream::ActorNoise),
            augmentation: stream(seed, Stream::Augmentation),
        }
    }
}

/// Losses and statistics of one update. Actor and temperature entries are
/// present only on steps that update them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateMetrics {
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
    pub alpha_loss: Option<f64>,
    pub alpha: f64,
    pub mean_q: f64,
}

/// SAC agent: online networks, target copies of encoder and critic, the
/// temperature, and one Adam state per trained store.
#[derive(Debug, Clone)]
pub struct Agent<T: Float> {
    pub nets: Networks<T>,
    pub target_encoder: ParamStore<T>,
    pub target_critic: ParamStore<T>,
    pub log_alpha: ParamStore<T>,
    pub input: InputShape,
    pub hyper: SacHyper,
    encoder_opt: AdamState<T>,
    critic_opt: AdamState<T>,
    actor_opt: AdamState<T>,
    alpha_opt: AdamState<T>,
}

fn sum_of<T: Float>(v: &[T]) -> f64 {
    v.iter().map(|x| x.f64()).sum()
}

/// `target ← (1−τ)·target + τ·online`, with `tau_backbone` for parameters
/// named `encoder.*` and `tau_heads` for the rest.
pub fn soft_update<T: Float>(online: &ParamStore<T>, target: &mut ParamStore<T>, tau_backbone: f64, tau_heads: f64) -> Result<()> {
    if online.len() != target.len() || online.iter().zip(target.iter()).any(|((a, _), (b, _))| a != b) {
        return Err(Error::State("soft update between stores with different parameter names".into()));
    }
    for ((name, src), (_, dst)) in online.iter().zip(target.iter_mut()) {
        let tau = if name.starts_with("encoder.") { tau_backbone } else { tau_heads };
        let (tau, keep) = (T::of(tau), T::of(1.0 - tau));
        for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
            *d = keep * *d + tau * s;
        }
    }
    Ok(())
}

/// Clipped double-Q target `r + γ(1−d)·v` where `v` is the supplied soft
/// value estimate.
fn bootstrap<T: Float>(reward: &[T], done: &[T], gamma: f64, value: Option<&[T]>) -> Vec<T> {
    let g = T::of(gamma);
    match value {
        None => reward.to_vec(),
        Some(v) => reward
            .iter()
            .zip(done)
            .zip(v)
            .map(|((&r, &d), &v)| r + g * (T::one() - d) * v)
            .collect(),
    }
}

struct RawBatch<'b> {
    obs: Vec<&'b Observation>,
    next_obs: Vec<&'b Observation>,
    action: Tensor<f64>,
    reward: Vec<f64>,
    done: Vec<f64>,
}

impl<'b> RawBatch<'b> {
    fn gather(buf: &'b ReplayBuffer, idx: &[usize], action_dim: usize) -> Result<Self> {
        let items: Vec<&Transition> = idx.iter().map(|&i| buf.get(i)).collect();
        let mut actions = Vec::with_capacity(idx.len() * action_dim);
        for t in &items {
            if t.action.len() != action_dim {
                return Err(Error::dim(format!("stored action of length {} for {action_dim}-D actions", t.action.len())));
            }
            actions.extend_from_slice(&t.action);
        }
        Ok(RawBatch {
            obs: items.iter().map(|t| &t.obs).collect(),
            next_obs: items.iter().map(|t| &t.next_obs).collect(),
            action: Tensor::new(&[idx.len(), action_dim], actions)?,
            reward: items.iter().map(|t| t.reward).collect(),
            done: items.iter().map(|t| if t.done { 1.0 } else { 0.0 }).collect(),
        })
    }
}

impl<T: Float> Agent<T> {
    pub fn new(spec: &NetSpec, hyper: SacHyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let nets = Networks::new(spec, seed)?;
        let mut log_alpha = ParamStore::new();
        log_alpha.insert(LOG_ALPHA, Tensor::scalar(T::of(hyper.initial_temperature.ln())))?;
        Ok(Agent {
            target_encoder: nets.encoder_params.clone(),
            target_critic: nets.critic_params.clone(),
            encoder_opt: AdamState::new(&nets.encoder_params, hyper.lr),
            critic_opt: AdamState::new(&nets.critic_params, hyper.lr),
            actor_opt: AdamState::new(&nets.actor_params, hyper.lr),
            alpha_opt: AdamState::new(&log_alpha, hyper.lr_alpha),
            log_alpha,
            input: spec.input,
            hyper,
            nets,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.nets.actor.action_dim
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.get(self.log_alpha.id_of(LOG_ALPHA).unwrap()).data()[0].f64().exp()
    }

    /// Soft state value `min(Q̄₁, Q̄₂)(s', a') − α·log π(a'|s')` for `a'` drawn
    /// from the online policy with `noise`; no gradients are kept.
    pub fn target_value(&self, next_obs: &Tensor<T>, noise: &[T]) -> Result<Vec<T>> {
        let nets = &self.nets;
        let mut tape = Tape::new();
        let x = tape.input(next_obs, false);
        let online = nets.encoder.forward(&mut tape, &nets.encoder_params, x)?;
        let online = tape.detach(online);
        let s = nets.actor.sample_with_noise(&mut tape, &nets.actor_params, online, noise)?;
        let target = nets.encoder.forward(&mut tape, &self.target_encoder, x)?;
        let (q1, q2) = nets.critic.forward(&mut tape, &self.target_critic, target, s.action)?;
        let q = tape.minimum(q1, q2)?;
        let alpha = T::of(self.alpha());
        Ok(tape
            .value(q)
            .iter()
            .zip(tape.value(s.log_prob))
            .map(|(&q, &lp)| q - alpha * lp)
            .collect())
    }

    /// Critic target for a batch. Batches where every transition is terminal
    /// reduce to `y = r` and skip the network evaluation.
    pub fn critic_target(&self, next_obs: &Tensor<T>, reward: &[T], done: &[T], noise: &[T]) -> Result<Vec<T>> {
        if done.iter().all(|&d| d == T::one()) {
            return Ok(bootstrap(reward, done, self.hyper.gamma, None));
        }
        let v = self.target_value(next_obs, noise)?;
        Ok(bootstrap(reward, done, self.hyper.gamma, Some(&v)))
    }

    /// Records `mean((Q₁−y)² + (Q₂−y)²)` on `tape`; returns the loss and
    /// `min(Q₁, Q₂)`.
    pub fn critic_loss<'p>(&'p self, tape: &mut Tape<'p, T>, obs: Var, action: Var, y: &[T]) -> Result<(Var, Var)> {
        let nets = &self.nets;
        let f = nets.encoder.forward(tape, &nets.encoder_params, obs)?;
        let (q1, q2) = nets.critic.forward(tape, &nets.critic_params, f, action)?;
        let y = tape.constant(&[y.len()], y.to_vec())?;
        let d1 = tape.sub(q1, y)?;
        let d2 = tape.sub(q2, y)?;
        let s1 = tape.square(d1)?;
        let s2 = tape.square(d2)?;
        let s = tape.add(s1, s2)?;
        let q = tape.minimum(q1, q2)?;
        Ok((tape.mean(s)?, q))
    }

    /// Records `mean(α·log π(a|s) − min(Q₁, Q₂)(s, a))` with detached encoder
    /// features and a frozen critic; returns the loss and `log π`.
    pub fn actor_loss<'p>(&'p self, tape: &mut Tape<'p, T>, obs: Var, noise: &[T], alpha: f64) -> Result<(Var, Var)> {
        let nets = &self.nets;
        tape.freeze(&nets.encoder_params);
        tape.freeze(&nets.critic_params);
        let f = nets.encoder.forward(tape, &nets.encoder_params, obs)?;
        let f = tape.detach(f);
        let s = nets.actor.sample_with_noise(tape, &nets.actor_params, f, noise)?;
        let (q1, q2) = nets.critic.forward(tape, &nets.critic_params, f, s.action)?;
        let q = tape.minimum(q1, q2)?;
        let ent = tape.scale(s.log_prob, alpha)?;
        let obj = tape.sub(ent, q)?;
        Ok((tape.mean(obj)?, s.log_prob))
    }

    /// Records `mean(−exp(log α)·(log π + H))` for detached `log_prob`.
    pub fn alpha_loss<'p>(&'p self, tape: &mut Tape<'p, T>, log_prob: &[T]) -> Result<Var> {
        let la = tape.param(&self.log_alpha, self.log_alpha.id_of(LOG_ALPHA).unwrap());
        let alpha = tape.exp(la)?;
        let h = self.hyper.target_entropy;
        let shifted: Vec<T> = log_prob.iter().map(|&lp| lp + T::of(h)).collect();
        let c = tape.constant(&[shifted.len()], shifted)?;
        let prod = tape.mul(c, alpha)?;
        let neg = tape.neg(prod)?;
        tape.mean(neg)
    }

    fn apply(store: &mut ParamStore<T>, opt: &mut AdamState<T>, grads: &Gradients<T>) -> Result<()> {
        store.accumulate(grads);
        opt.step(store)
    }

    /// Critic step on the mean of the given per-augmentation losses.
    fn critic_step(&mut self, obs: &[Tensor<T>], action: &Tensor<T>, y: &[T]) -> Result<(f64, f64)> {
        let (grads, loss, mean_q) = {
            let mut tape = Tape::new();
            let a = tape.input(action, false);
            let mut total: Option<Var> = None;
            let mut mean_q = 0.0;
            for (m, o) in obs.iter().enumerate() {
                let x = tape.input(o, false);
                let (l, q) = self.critic_loss(&mut tape, x, a, y)?;
                if m == 0 {
                    mean_q = sum_of(tape.value(q)) / y.len() as f64;
                }
                total = Some(match total {
                    None => l,
                    Some(t) => tape.add(t, l)?,
                });
            }
            let total = total.ok_or_else(|| Error::State("critic step without observations".into()))?;
            let loss = tape.scale(total, 1.0 / obs.len() as f64)?;
            (tape.backward(loss)?, tape.scalar(loss).f64(), mean_q)
        };
        Self::apply(&mut self.nets.encoder_params, &mut self.encoder_opt, &grads)?;
        Self::apply(&mut self.nets.critic_params, &mut self.critic_opt, &grads)?;
        Ok((loss, mean_q))
    }

    /// Actor step followed by the temperature step.
    pub(crate) fn actor_and_alpha_step(&mut self, obs: &Tensor<T>, noise: &[T]) -> Result<(f64, f64)> {
        let alpha = self.alpha();
        let (grads, loss, log_prob) = {
            let mut tape = Tape::new();
            let x = tape.input(obs, false);
            let (l, lp) = self.actor_loss(&mut tape, x, noise, alpha)?;
            (tape.backward(l)?, tape.scalar(l).f64(), tape.value(lp).to_vec())
        };
        Self::apply(&mut self.nets.actor_params, &mut self.actor_opt, &grads)?;
        let (grads, alpha_loss) = {
            let mut tape = Tape::new();
            let l = self.alpha_loss(&mut tape, &log_prob)?;
            (tape.backward(l)?, tape.scalar(l).f64())
        };
        Self::apply(&mut self.log_alpha, &mut self.alpha_opt, &grads)?;
        Ok((loss, alpha_loss))
    }

    fn finish(&mut self, step: u64, critic: (f64, f64), actor: Option<(f64, f64)>) -> Result<UpdateMetrics> {
        if step.is_multiple_of(self.hyper.target_update_interval) {
            let (tb, th) = (self.hyper.tau_backbone, self.hyper.tau_heads);
            soft_update(&self.nets.encoder_params, &mut self.target_encoder, tb, th)?;
            soft_update(&self.nets.critic_params, &mut self.target_critic, tb, th)?;
        }
        Ok(UpdateMetrics {
            critic_loss: critic.0,
            actor_loss: actor.map(|a| a.0),
            alpha_loss: actor.map(|a| a.1),
            alpha: self.alpha(),
            mean_q: critic.1,
        })
    }

    fn check_ready(&self, buf: &ReplayBuffer) -> Result<()> {
        if buf.len() < self.hyper.batch_size {
            return Err(Error::State(format!(
                "update needs {} transitions, buffer holds {}",
                self.hyper.batch_size,
                buf.len()
            )));
        }
        Ok(())
    }

    /// One SAC update. The critic is always trained; actor and temperature
    /// on multiples of the actor interval; targets on multiples of the
    /// target interval.
    pub fn sac_update(&mut self, buf: &ReplayBuffer, step: u64, rngs: &mut UpdateRngs) -> Result<UpdateMetrics> {
        self.check_ready(buf)?;
        let b = self.hyper.batch_size;
        let a_dim = self.action_dim();
        let idx = buf.sample_indices(b, &mut rngs.buffer)?;
        let raw = RawBatch::gather(buf, &idx, a_dim)?;
        let obs: Tensor<T> = obs_tensor(&raw.obs, self.input, Augmentation::Identity, &mut rngs.augmentation)?;
        let next: Tensor<T> = obs_tensor(&raw.next_obs, self.input, Augmentation::Identity, &mut rngs.augmentation)?;
        let action: Tensor<T> = raw.action.cast();
        let reward: Vec<T> = raw.reward.iter().map(|&r| T::of(r)).collect();
        let done: Vec<T> = raw.done.iter().map(|&d| T::of(d)).collect();

        let noise = normal_noise::<T>(b * a_dim, &mut rngs.noise);
        let y = self.critic_target(&next, &reward, &done, &noise)?;
        let critic = self.critic_step(std::slice::from_ref(&obs), &action, &y)?;
        let actor = if step.is_multiple_of(self.hyper.actor_update_interval) {
            let noise = normal_noise::<T>(b * a_dim, &mut rngs.noise);
            Some(self.actor_and_alpha_step(&obs, &noise)?)
        } else {
            None
        };
        self.finish(step, critic, actor)
    }

    /// One DrQ update: the target averages `K` augmented next observations,
    /// the critic loss averages `M` augmented observations, and the actor
    /// sees the first of those.
    pub fn drq_update(&mut self, buf: &ReplayBuffer, drq: &DrqSpec, step: u64, rngs: &mut UpdateRngs) -> Result<UpdateMetrics> {
        drq.validate()?;
        self.check_ready(buf)?;
        let b = self.hyper.batch_size;
        let a_dim = self.action_dim();
        let idx = buf.sample_indices(b, &mut rngs.buffer)?;
        let raw = RawBatch::gather(buf, &idx, a_dim)?;
        let action: Tensor<T> = raw.action.cast();
        let reward: Vec<T> = raw.reward.iter().map(|&r| T::of(r)).collect();
        let done: Vec<T> = raw.done.iter().map(|&d| T::of(d)).collect();
        let terminal = done.iter().all(|&d| d == T::one());

        let mut value_sum: Option<Vec<T>> = None;
        for _ in 0..drq.k {
            let next: Tensor<T> = obs_tensor(&raw.next_obs, self.input, drq.augmentation, &mut rngs.augmentation)?;
            let noise = normal_noise::<T>(b * a_dim, &mut rngs.noise);
            if terminal {
                continue;
            }
            let v = self.target_value(&next, &noise)?;
            value_sum = Some(match value_sum {
                None => v,
                Some(acc) => acc.iter().zip(&v).map(|(&a, &x)| a + x).collect(),
            });
        }
        let inv_k = T::of(1.0 / drq.k as f64);
        let value = value_sum.map(|s| s.into_iter().map(|v| v * inv_k).collect::<Vec<T>>());
        let y = bootstrap(&reward, &done, self.hyper.gamma, value.as_deref());

        let obs: Vec<Tensor<T>> = (0..drq.m)
            .map(|_| obs_tensor(&raw.obs, self.input, drq.augmentation, &mut rngs.augmentation))
            .collect::<Result<_>>()?;
        let critic = self.critic_step(&obs, &action, &y)?;
        let actor = if step.is_multiple_of(self.hyper.actor_update_interval) {
            let noise = normal_noise::<T>(b * a_dim, &mut rngs.noise);
            Some(self.actor_and_alpha_step(&obs[0], &noise)?)
        } else {
            None
        };
        self.finish(step, critic, actor)
    }

    fn single(&self, obs: &Observation) -> Result<Tensor<T>> {
        obs_tensor(&[obs], self.input, Augmentation::Identity, &mut crate::rng::seeded(0))
    }

    /// Action for one observation: the squashed mean when `deterministic`,
    /// otherwise a policy sample.
    pub fn act(&self, obs: &Observation, deterministic: bool, rng: &mut Rng) -> Result<Vec<f64>> {
        let x = self.single(obs)?;
        let nets = &self.nets;
        let mut tape = Tape::new();
        let x = tape.input(&x, false);
        let f = nets.encoder.forward(&mut tape, &nets.encoder_params, x)?;
        let a = if deterministic {
            nets.actor.mean_action(&mut tape, &nets.actor_params, f)?
        } else {
            let noise = normal_noise::<T>(self.action_dim(), rng);
            nets.actor.sample_with_noise(&mut tape, &nets.actor_params, f, &noise)?.action
        };
        Ok(tape.value(a).iter().map(|v| v.f64()).collect())
    }

    /// `min(Q₁, Q₂)` of the online critic for a batch of encoder inputs.
    pub fn min_q(&self, obs: &Tensor<T>, action: &Tensor<T>) -> Result<Vec<f64>> {
        let nets = &self.nets;
        let mut tape = Tape::new();
        let x = tape.input(obs, false);
        let a = tape.input(action, false);
        let f = nets.encoder.forward(&mut tape, &nets.encoder_params, x)?;
        let (q1, q2) = nets.critic.forward(&mut tape, &nets.critic_params, f, a)?;
        let q = tape.minimum(q1, q2)?;
        Ok(tape.value(q).iter().map(|v| v.f64()).collect())
    }

    /// Deterministic actions for a batch of encoder inputs.
    pub fn mean_actions(&self, obs: &Tensor<T>) -> Result<Tensor<T>> {
        let nets = &self.nets;
        let mut tape = Tape::new();
        let x = tape.input(obs, false);
        let f = nets.encoder.forward(&mut tape, &nets.encoder_params, x)?;
        let a = nets.actor.mean_action(&mut tape, &nets.actor_params, f)?;
        Ok(tape.to_tensor(a))
    }

    /// Online parameters, target copies under `target.`, and the temperature.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new();
        self.nets.push_to(&mut ckpt, "")?;
        ckpt.push_store(TARGET_PREFIX, &self.target_encoder)?;
        ckpt.push_store(TARGET_PREFIX, &self.target_critic)?;
        ckpt.push_store("", &self.log_alpha)?;
        Ok(ckpt)
    }

    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        self.nets.load_from(ckpt, "")?;
        ckpt.load_into(TARGET_PREFIX, &mut self.target_encoder)?;
        ckpt.load_into(TARGET_PREFIX, &mut self.target_critic)?;
        ckpt.load_into("", &mut self.log_alpha)
    }
}
