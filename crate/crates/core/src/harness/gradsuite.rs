//! The complete finite-difference suite: every tape op, then the composed
//! critic and actor losses of small point-cloud and image agents.

use super::config::RunConfig;
use crate::autodiff::{op_suite, Tensor};
use crate::error::Result;
use crate::nn::{InputShape, NetSpec};
use crate::rng::{seeded, Rng};
use crate::sac::{check_actor_loss, check_critic_loss, normal_noise, Agent, LossProbe, SacHyper};
use rand::Rng as _;

pub const OP_THRESHOLD: f64 = 1e-5;
pub const LOSS_THRESHOLD: f64 = 1e-4;
const OP_STEP: f64 = 1e-6;
const LOSS_STEP: f64 = 1e-5;
const ENTRIES_PER_PARAM: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteLine {
    pub name: String,
    pub max_rel_error: f64,
    pub threshold: f64,
}

impl SuiteLine {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.threshold
    }
}

fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches data")
}

fn small_spec(input: InputShape) -> NetSpec {
    NetSpec {
        input,
        point_widths: vec![8, 16],
        embed_dim: 12,
        hidden: vec![24, 24],
        action_dim: 3,
        action_scale: RunConfig::default().env.action_scale(),
    }
}

fn loss_checks(name: &str, input: InputShape, seed: u64, out: &mut Vec<SuiteLine>) -> Result<()> {
    let b = 6;
    let spec = small_spec(input);
    let mut agent = Agent::<f64>::new(&spec, SacHyper::default(), seed)?;
    let mut rng = seeded(seed ^ 0x5eed);
    let obs = match input {
        InputShape::Points { points, channels } => {
            let mut t = uniform(&mut rng, &[b, points, channels], 0.0, 1.0);
            for row in t.data_mut().chunks_mut(channels) {
                row[..3].iter_mut().for_each(|c| *c = *c * 20.0 - 10.0);
            }
            t
        }
        InputShape::Image { .. } => uniform(&mut rng, &input.batch_shape(b), 0.0, 1.0),
    };
    let s = spec.action_scale;
    let probe = LossProbe {
        obs,
        action: uniform(&mut rng, &[b, 3], -s, s),
        y: (0..b).map(|_| rng.random_range(-10.0..0.0)).collect(),
        noise: normal_noise(b * 3, &mut rng),
        alpha: 0.1,
    };
    let (err, _) = check_critic_loss(&mut agent, &probe, LOSS_STEP, ENTRIES_PER_PARAM)?;
    out.push(SuiteLine {
        name: format!("critic_loss.{name}"),
        max_rel_error: err,
        threshold: LOSS_THRESHOLD,
    });
    let (err, _) = check_actor_loss(&mut agent, &probe, LOSS_STEP, ENTRIES_PER_PARAM)?;
    out.push(SuiteLine {
        name: format!("actor_loss.{name}"),
        max_rel_error: err,
        threshold: LOSS_THRESHOLD,
    });
    Ok(())
}

/// Runs every check at 64-bit precision.
pub fn grad_check_suite(seed: u64) -> Result<Vec<SuiteLine>> {
    let mut out: Vec<SuiteLine> = op_suite(seed, OP_STEP)?
        .into_iter()
        .map(|r| SuiteLine {
            name: r.name,
            max_rel_error: r.max_rel_error,
            threshold: OP_THRESHOLD,
        })
        .collect();
    loss_checks("pointnet", InputShape::Points { points: 12, channels: 7 }, seed, &mut out)?;
    loss_checks(
        "cnn",
        InputShape::Image {
            channels: 3,
            height: 16,
            width: 16,
        },
        seed,
        &mut out,
    )?;
    Ok(out)
}
