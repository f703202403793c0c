use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng as _;

use super::agent::{Agent, UpdateMetrics, UpdateRngs};
use super::buffer::{FrameStack, ReplayBuffer, Transition};
use super::config::{AgentConfig, Algorithm};
use crate::env::{self, EnvConfig, Modality};
use crate::error::{Error, Result};
use crate::nn::{InputShape, NetSpec};
use crate::rng::{derive, stream, Rng, Stream};

pub const METRICS_HEADER: &str = "step,episode_return,critic_loss,actor_loss,alpha_loss,alpha,mean_q,eval_return";
pub const METRICS_FILE: &str = "metrics.csv";

/// Schedule and output of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub total_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub checkpoint_interval: u64,
    pub log_interval: u64,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            total_steps: 100_000,
            eval_interval: 5_000,
            eval_episodes: 100,
            checkpoint_interval: 50_000,
            log_interval: 1_000,
            seed: 1,
            out_dir: None,
        }
    }
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        if self.eval_interval == 0 || self.log_interval == 0 {
            return Err(Error::Config("eval_interval and log_interval must be at least 1".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be at least 1".into()));
        }
        Ok(())
    }
}

/// One metrics line. Training columns are means over the steps since the
/// previous line; absent values are written as empty fields.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsRow {
    pub step: u64,
    pub episode_return: Option<f64>,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub alpha_loss: Option<f64>,
    pub alpha: Option<f64>,
    pub mean_q: Option<f64>,
    pub eval_return: Option<f64>,
}

fn field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            field(self.episode_return),
            field(self.critic_loss),
            field(self.actor_loss),
            field(self.alpha_loss),
            field(self.alpha),
            field(self.mean_q),
            field(self.eval_return)
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

/// Encoder input and head sizes implied by the environment and agent.
pub fn net_spec(env: &EnvConfig, agent: &AgentConfig) -> NetSpec {
    let k = agent.frame_stack;
    let input = match env.obs_modality {
        Modality::PointCloud => InputShape::Points {
            points: env.point_budget * k,
            channels: 3 + 3 + k,
        },
        m => InputShape::Image {
            channels: m.image_channels() * k,
            height: env.image_height,
            width: env.image_width,
        },
    };
    NetSpec {
        input,
        point_widths: agent.point_widths.clone(),
        embed_dim: agent.embed_dim,
        hidden: agent.hidden.clone(),
        action_dim: 3,
        action_scale: env.action_scale(),
    }
}

pub fn build_agent(env: &EnvConfig, agent: &AgentConfig, seed: u64) -> Result<Agent<f32>> {
    Agent::new(&net_spec(env, agent), agent.hyper.clone(), derive(seed, Stream::Init as u64))
}

/// Mean return of the deterministic policy over `episodes` fresh states.
/// The state sequence depends only on `seed`.
pub fn evaluate(agent: &Agent<f32>, env: &EnvConfig, frame_stack: usize, episodes: usize, seed: u64) -> Result<f64> {
    let mut rng = stream(seed, Stream::Eval);
    let mut unused = stream(seed, Stream::Eval);
    let mut fs = FrameStack::new(frame_stack)?;
    let mut total = 0.0;
    for _ in 0..episodes {
        let (state, obs) = env::reset(env, &mut rng)?;
        let stacked = fs.reset(obs)?;
        let action = agent.act(&stacked, true, &mut unused)?;
        total += env::reward(&state, [action[0], action[1], action[2]]);
    }
    Ok(total / episodes as f64)
}

/// Result of [`train`].
#[derive(Debug)]
pub struct TrainOutcome {
    pub rows: Vec<MetricsRow>,
    pub agent: Agent<f32>,
    pub buffer: ReplayBuffer,
    pub updates: u64,
}

#[derive(Default)]
struct Window {
    returns: Vec<f64>,
    updates: Vec<UpdateMetrics>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

impl Window {
    fn row(&mut self, step: u64) -> MetricsRow {
        let u = &self.updates;
        let row = MetricsRow {
            step,
            episode_return: mean(self.returns.iter().copied()),
            critic_loss: mean(u.iter().map(|m| m.critic_loss)),
            actor_loss: mean(u.iter().filter_map(|m| m.actor_loss)),
            alpha_loss: mean(u.iter().filter_map(|m| m.alpha_loss)),
            alpha: u.last().map(|m| m.alpha),
            mean_q: mean(u.iter().map(|m| m.mean_q)),
            eval_return: None,
        };
        *self = Window::default();
        row
    }
}

struct CsvSink {
    out: BufWriter<File>,
    path: PathBuf,
}

impl CsvSink {
    fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(METRICS_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut sink = CsvSink {
            out: BufWriter::new(file),
            path,
        };
        sink.line(METRICS_HEADER)?;
        Ok(sink)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// The training loop: uniform warm-up actions, then policy actions with one
/// update per environment step; periodic evaluation, logging and checkpoints.
/// With an output directory the final state is always checkpointed.
pub fn train(env: &EnvConfig, cfg: &AgentConfig, run: &RunSettings) -> Result<TrainOutcome> {
    train_with(env, cfg, run, &mut |_| {})
}

/// [`train`] with a callback receiving every metrics row as it is produced.
pub fn train_with(
    env: &EnvConfig,
    cfg: &AgentConfig,
    run: &RunSettings,
    observer: &mut dyn FnMut(&MetricsRow),
) -> Result<TrainOutcome> {
    env.validate()?;
    cfg.validate()?;
    run.validate()?;
    let seed = run.seed;
    let mut agent = build_agent(env, cfg, seed)?;
    let mut buffer = ReplayBuffer::new(cfg.hyper.buffer_capacity)?;
    let mut env_rng = stream(derive(seed, env.rng_seed), Stream::Env);
    let mut warm_rng = stream(seed, Stream::Warmup);
    let mut act_rng: Rng = stream(derive(seed, 0xac7), Stream::ActorNoise);
    let mut rngs = UpdateRngs::from_seed(seed);
    let mut fs = FrameStack::new(cfg.frame_stack)?;
    let mut sink = run.out_dir.as_deref().map(CsvSink::create).transpose()?;
    let scale = env.action_scale();

    let mut rows = Vec::new();
    let mut window = Window::default();
    let mut current: Option<(env::ReacherState, crate::env::Observation)> = None;
    let mut episode_return = 0.0;
    let mut updates = 0u64;

    for t in 1..=run.total_steps {
        let (state, stacked) = match current.take() {
            Some(s) => s,
            None => {
                let (state, obs) = env::reset(env, &mut env_rng)?;
                (state, fs.reset(obs)?)
            }
        };
        let action: Vec<f64> = if t <= cfg.hyper.warmup_steps {
            (0..3).map(|_| warm_rng.random_range(-scale..=scale)).collect()
        } else {
            agent.act(&stacked, false, &mut act_rng)?
        };
        let res = env::step(&state, [action[0], action[1], action[2]], env, &mut env_rng)?;
        let next = fs.push(res.next_observation)?;
        episode_return += res.reward;
        buffer.push(Transition {
            obs: stacked,
            action,
            reward: res.reward,
            next_obs: next.clone(),
            done: res.done,
        });
        if res.done {
            window.returns.push(episode_return);
            episode_return = 0.0;
        } else {
            current = Some((res.next_state, next));
        }

        if t > cfg.hyper.warmup_steps && buffer.len() >= cfg.hyper.batch_size {
            let m = match cfg.algorithm {
                Algorithm::Sac => agent.sac_update(&buffer, t, &mut rngs)?,
                Algorithm::Drq => agent.drq_update(&buffer, &cfg.drq, t, &mut rngs)?,
            };
            window.updates.push(m);
            updates += 1;
        }

        let eval_due = t % run.eval_interval == 0;
        if t % run.log_interval == 0 || eval_due {
            let mut row = window.row(t);
            if eval_due {
                row.eval_return = Some(evaluate(&agent, env, cfg.frame_stack, run.eval_episodes, seed)?);
            }
            if let Some(s) = sink.as_mut() {
                s.line(&row.to_csv())?;
            }
            observer(&row);
            rows.push(row);
        }
        if let Some(dir) = &run.out_dir {
            if run.checkpoint_interval > 0 && t % run.checkpoint_interval == 0 {
                agent.checkpoint()?.save(dir.join(format!("ckpt_{t}.pcrl")))?;
            }
        }
    }
    if let Some(dir) = &run.out_dir {
        let t = run.total_steps;
        if t > 0 && (run.checkpoint_interval == 0 || t % run.checkpoint_interval != 0) {
            agent.checkpoint()?.save(dir.join(format!("ckpt_{t}.pcrl")))?;
        }
    }
    Ok(TrainOutcome {
        rows,
        agent,
        buffer,
        updates,
    })
}
