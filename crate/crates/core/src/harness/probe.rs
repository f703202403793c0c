//! Value robustness under input perturbations, and the pixel-to-world
//! correspondence of image shifts in this scene.

use rand::Rng as _;

use super::config::RunConfig;
use crate::autodiff::Tensor;
use crate::env::{self, Observation};
use crate::error::{Error, Result};
use crate::geometry::shift_image;
use crate::nn::InputShape;
use crate::rng::Rng;
use crate::sac::{net_spec, obs_tensor, Agent, Augmentation, FrameStack};

pub const ROBUSTNESS_HEADER: &str = "modality,magnitude,mean_rel_dq,std_rel_dq,samples";
pub const CORRESPONDENCE_HEADER: &str = "shift_px,mean_abs_dx,mean_abs_dy,mean_abs_dz,pixels";

const PROBE_CHUNK: usize = 64;

/// Relative Q change statistics at one perturbation magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustnessRow {
    pub magnitude: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessReport {
    pub modality: String,
    pub samples: usize,
    pub rows: Vec<RobustnessRow>,
}

impl RobustnessReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{ROBUSTNESS_HEADER}\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{}\n", self.modality, r.magnitude, r.mean, r.std, self.samples));
        }
        s
    }
}

/// Fails with a configuration error unless the agent was built for `cfg`.
pub fn check_agent_matches(agent: &Agent<f32>, cfg: &RunConfig) -> Result<()> {
    let want = net_spec(&cfg.env, &cfg.agent).input;
    if agent.input != want {
        return Err(Error::Config(format!(
            "checkpoint expects inputs of shape {:?} but the configuration produces {want:?}",
            agent.input
        )));
    }
    Ok(())
}

/// Adds `[m, m, m]` to every point, or shifts every image by `round(m)`
/// pixels along both axes with edge replication.
fn perturb(x: &Tensor<f32>, input: InputShape, m: f64) -> Tensor<f32> {
    let mut out = x.clone();
    match input {
        InputShape::Points { channels, .. } => {
            let d = m as f32;
            for row in out.data_mut().chunks_mut(channels) {
                row[..3].iter_mut().for_each(|c| *c += d);
            }
        }
        InputShape::Image { channels, height, width } => {
            let s = m.round() as i64;
            let n = channels * height * width;
            for img in out.data_mut().chunks_mut(n) {
                let shifted = shift_image(img, channels, height, width, s, s);
                img.copy_from_slice(&shifted);
            }
        }
    }
    out
}

fn fresh_observations(cfg: &RunConfig, n: usize, rng: &mut Rng) -> Result<Vec<Observation>> {
    let mut fs = FrameStack::new(cfg.agent.frame_stack)?;
    (0..n)
        .map(|_| {
            let (_, obs) = env::reset(&cfg.env, rng)?;
            fs.reset(obs)
        })
        .collect()
}

/// Mean and standard deviation of `|Q' − Q| / max(|Q|, 1e-6)` per magnitude,
/// with `Q = min(Q₁, Q₂)` at the actor-mean action of the clean state and
/// `Q'` on the perturbed observation with the same action.
pub fn probe_robustness(
    agent: &Agent<f32>,
    cfg: &RunConfig,
    magnitudes: &[f64],
    samples: usize,
    rng: &mut Rng,
) -> Result<RobustnessReport> {
    check_agent_matches(agent, cfg)?;
    if magnitudes.is_empty() || samples == 0 {
        return Err(Error::Input("probe needs at least one magnitude and one sample".into()));
    }
    if magnitudes.iter().any(|m| !m.is_finite() || *m < 0.0) || magnitudes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Input("magnitudes must be finite, non-negative and strictly increasing".into()));
    }
    let mut rows = Vec::with_capacity(magnitudes.len());
    for &m in magnitudes {
        let obs = fresh_observations(cfg, samples, rng)?;
        let mut rel = Vec::with_capacity(samples);
        for chunk in obs.chunks(PROBE_CHUNK) {
            let refs: Vec<&Observation> = chunk.iter().collect();
            let x: Tensor<f32> = obs_tensor(&refs, agent.input, Augmentation::Identity, rng)?;
            let a = agent.mean_actions(&x)?;
            let q = agent.min_q(&x, &a)?;
            let q2 = agent.min_q(&perturb(&x, agent.input, m), &a)?;
            rel.extend(q.iter().zip(&q2).map(|(q, q2)| (q2 - q).abs() / q.abs().max(1e-6)));
        }
        let mean = rel.iter().sum::<f64>() / rel.len() as f64;
        let var = rel.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / rel.len() as f64;
        rows.push(RobustnessRow {
            magnitude: m,
            mean,
            std: var.sqrt(),
        });
    }
    Ok(RobustnessReport {
        modality: cfg.env.obs_modality.to_string(),
        samples,
        rows,
    })
}

/// World-space displacement implied by an image shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub shift_px: u32,
    pub mean_abs_delta: [f64; 3],
    pub pixels: usize,
}

impl Correspondence {
    pub fn to_csv_line(&self) -> String {
        let [x, y, z] = self.mean_abs_delta;
        format!("{},{x},{y},{z},{}", self.shift_px, self.pixels)
    }
}

/// Shifts the depth image of `samples` fresh states by a random offset in
/// `[−shift, shift]²` (nonzero), back-projects each surface pixel at its new
/// location with its depth unchanged, and averages the absolute world-space
/// displacement per axis.
pub fn pixel_correspondence(cfg: &RunConfig, shift_px: u32, samples: usize, rng: &mut Rng) -> Result<Correspondence> {
    if shift_px == 0 || samples == 0 {
        return Err(Error::Input("correspondence needs a positive shift and sample count".into()));
    }
    let cam = &cfg.env.camera;
    let s = shift_px as i64;
    let mut sum = [0.0; 3];
    let mut pixels = 0usize;
    for _ in 0..samples {
        let state = env::sample_state(&cfg.env, rng)?;
        let depth = env::render(&state, &cfg.env).depth;
        let (dx, dy) = loop {
            let d = (rng.random_range(-s..=s), rng.random_range(-s..=s));
            if d != (0, 0) {
                break d;
            }
        };
        for v in 0..depth.height {
            for u in 0..depth.width {
                let z = depth.at(v, u)[0];
                if !(z.is_finite() && z > 0.0) {
                    continue;
                }
                let (uc, vc) = (u as f64, v as f64);
                let p = cam.unproject(uc, vc, z);
                let q = cam.unproject(uc + dx as f64, vc + dy as f64, z);
                for k in 0..3 {
                    sum[k] += (q[k] - p[k]).abs();
                }
                pixels += 1;
            }
        }
    }
    if pixels == 0 {
        return Err(Error::Domain("no surface pixels in the sampled renderings".into()));
    }
    Ok(Correspondence {
        shift_px,
        mean_abs_delta: sum.map(|t| t / pixels as f64),
        pixels,
    })
}

/// Agent for `cfg` with parameters read from a checkpoint file. A checkpoint
/// written for another modality or architecture is a configuration error.
pub fn load_agent(cfg: &RunConfig, path: impl AsRef<std::path::Path>) -> Result<Agent<f32>> {
    let ckpt = crate::autodiff::Checkpoint::load(path.as_ref())?;
    let mut agent = crate::sac::build_agent(&cfg.env, &cfg.agent, cfg.run.seed)?;
    agent.load_checkpoint(&ckpt).map_err(|e| {
        Error::Config(format!(
            "checkpoint {} does not fit the {} configuration: {e}",
            path.as_ref().display(),
            cfg.env.obs_modality
        ))
    })?;
    Ok(agent)
}
