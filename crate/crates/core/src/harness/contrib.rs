//! Which points survive max-pooling, and which sphere they belong to.

use super::config::RunConfig;
use super::probe::check_agent_matches;
use crate::env::{self, Modality, Observation};
use crate::error::{Error, Result};
use crate::nn::Encoder;
use crate::rng::Rng;
use crate::sac::{Agent, FrameStack};

pub const CONTRIB_HEADER: &str = "episode,points,contributing_fraction,sphere0_fraction,sphere1_fraction";

/// Contribution summary of one observation. The sphere fractions split the
/// contributing points by nearest sphere center.
#[derive(Debug, Clone, PartialEq)]
pub struct ContribRow {
    pub episode: usize,
    pub points: usize,
    pub contributing_fraction: f64,
    pub sphere0_fraction: f64,
    pub sphere1_fraction: f64,
    pub flags: Vec<bool>,
}

impl ContribRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.episode, self.points, self.contributing_fraction, self.sphere0_fraction, self.sphere1_fraction
        )
    }
}

pub fn contrib_csv(rows: &[ContribRow]) -> String {
    let mut s = format!("{CONTRIB_HEADER}\n");
    for r in rows {
        s.push_str(&r.to_csv_line());
        s.push('\n');
    }
    s
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

/// Contribution maps of the first observation of `episodes` fresh episodes.
pub fn contrib_report(agent: &Agent<f32>, cfg: &RunConfig, episodes: usize, rng: &mut Rng) -> Result<Vec<ContribRow>> {
    if cfg.env.obs_modality != Modality::PointCloud {
        return Err(Error::Config("contribution maps need the pointcloud modality".into()));
    }
    check_agent_matches(agent, cfg)?;
    let Encoder::PointNet(net) = &agent.nets.encoder else {
        return Err(Error::Config("contribution maps need a point-cloud encoder".into()));
    };
    let mut fs = FrameStack::new(cfg.agent.frame_stack)?;
    (0..episodes)
        .map(|episode| {
            let (state, obs) = env::reset(&cfg.env, rng)?;
            let Observation::Cloud(cloud) = fs.reset(obs)? else {
                return Err(Error::Config("pointcloud modality produced an image".into()));
            };
            let flags = net.contribution_map(&agent.nets.encoder_params, &cloud.rows::<f32>(), cloud.len())?;
            let hits: Vec<&[f64; 3]> = cloud.coords().iter().zip(&flags).filter(|(_, &f)| f).map(|(c, _)| c).collect();
            let near0 = hits.iter().filter(|c| dist2(c, &state.x0) <= dist2(c, &state.x1)).count();
            let n_hits = hits.len().max(1) as f64;
            Ok(ContribRow {
                episode,
                points: cloud.len(),
                contributing_fraction: hits.len() as f64 / cloud.len().max(1) as f64,
                sphere0_fraction: near0 as f64 / n_hits,
                sphere1_fraction: (hits.len() - near0) as f64 / n_hits,
                flags,
            })
        })
        .collect()
}
