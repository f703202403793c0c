use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::AugmentKind;

/// SAC hyperparameters. Defaults are the motivating-example values.
#[derive(Debug, Clone, PartialEq)]
pub struct SacHyper {
    pub lr: f64,
    pub lr_alpha: f64,
    pub gamma: f64,
    pub initial_temperature: f64,
    pub target_update_interval: u64,
    pub actor_update_interval: u64,
    pub tau_backbone: f64,
    pub tau_heads: f64,
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub target_entropy: f64,
}

impl Default for SacHyper {
    fn default() -> Self {
        SacHyper {
            lr: 1e-3,
            lr_alpha: 1e-3,
            gamma: 0.99,
            initial_temperature: 0.1,
            target_update_interval: 2,
            actor_update_interval: 2,
            tau_backbone: 0.05,
            tau_heads: 0.01,
            warmup_steps: 300,
            batch_size: 128,
            buffer_capacity: 10_000,
            target_entropy: -3.0,
        }
    }
}

impl SacHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, tau) in [("tau_backbone", self.tau_backbone), ("tau_heads", self.tau_heads)] {
            if !(tau > 0.0 && tau <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {tau}"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.lr > 0.0 && self.lr_alpha > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(self.initial_temperature > 0.0) {
            return bad(format!("initial temperature must be positive, got {}", self.initial_temperature));
        }
        if self.target_update_interval == 0 || self.actor_update_interval == 0 {
            return bad("update intervals must be at least 1".into());
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return bad("batch size and buffer capacity must be at least 1".into());
        }
        if !self.target_entropy.is_finite() {
            return bad("target entropy must be finite".into());
        }
        Ok(())
    }
}

/// Observation augmentation used inside a DrQ update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Augmentation {
    Identity,
    /// Point-cloud augmentation of the given family and magnitude.
    Points { kind: AugmentKind, magnitude: f64 },
    /// Random integer image translation up to `max_shift` pixels.
    PixelShift { max_shift: usize },
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Augmentation::Identity => f.write_str("identity"),
            Augmentation::Points { kind, magnitude } => write!(f, "{kind}:{magnitude}"),
            Augmentation::PixelShift { max_shift } => write!(f, "pixel_shift:{max_shift}"),
        }
    }
}

impl FromStr for Augmentation {
    type Err = Error;

    /// `identity`, `pixel_shift:<n>`, or `<point kind>[:<magnitude>]`.
    fn from_str(s: &str) -> Result<Self> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let num = |a: &str| -> Result<f64> {
            a.parse::<f64>()
                .map_err(|_| Error::Config(format!("augmentation magnitude `{a}` is not a number")))
        };
        match head {
            "identity" if arg.is_none() => Ok(Augmentation::Identity),
            "pixel_shift" => {
                let n = arg.unwrap_or("4");
                let max_shift = n
                    .parse()
                    .map_err(|_| Error::Config(format!("pixel shift `{n}` is not a non-negative integer")))?;
                Ok(Augmentation::PixelShift { max_shift })
            }
            _ => {
                let kind: AugmentKind = head.parse()?;
                let magnitude = arg.map(num).transpose()?.unwrap_or(kind.default_magnitude());
                if kind == AugmentKind::Identity {
                    return Ok(Augmentation::Identity);
                }
                Ok(Augmentation::Points { kind, magnitude })
            }
        }
    }
}

/// DrQ averaging: `k` augmented target evaluations, `m` augmented Q evaluations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrqSpec {
    pub k: usize,
    pub m: usize,
    pub augmentation: Augmentation,
}

impl DrqSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.m == 0 {
            return Err(Error::Config(format!("DrQ needs K ≥ 1 and M ≥ 1, got K={} M={}", self.k, self.m)));
        }
        Ok(())
    }
}

/// Which update rule the agent trains with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Sac,
    Drq,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Sac => "sac",
            Algorithm::Drq => "drq",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sac" => Ok(Algorithm::Sac),
            "drq" => Ok(Algorithm::Drq),
            other => Err(Error::Config(format!("unknown algorithm `{other}` (expected sac or drq)"))),
        }
    }
}

/// Everything that defines an agent besides the environment.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub hyper: SacHyper,
    pub algorithm: Algorithm,
    pub drq: DrqSpec,
    pub point_widths: Vec<usize>,
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    pub frame_stack: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            hyper: SacHyper::default(),
            algorithm: Algorithm::Sac,
            drq: DrqSpec {
                k: 2,
                m: 2,
                augmentation: Augmentation::Identity,
            },
            point_widths: vec![32, 64, 128],
            embed_dim: 128,
            hidden: vec![1024, 1024],
            frame_stack: 1,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.drq.validate()?;
        if self.point_widths.is_empty() || self.point_widths.contains(&0) {
            return Err(Error::Config("point widths must be a nonempty list of positive sizes".into()));
        }
        if self.hidden.contains(&0) || self.embed_dim == 0 {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        if self.frame_stack == 0 {
            return Err(Error::Config("frame_stack must be at least 1".into()));
        }
        Ok(())
    }
}
