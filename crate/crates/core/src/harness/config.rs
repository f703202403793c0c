//! Line-oriented run configuration: `section.key = value`, `#` comments,
//! later keys override earlier ones, absent keys keep their defaults.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::env::{pose_camera, EnvConfig, DEFAULT_EYE, DEFAULT_FOCAL_SCALE, DEFAULT_TARGET};
use crate::error::{Error, Result};
use crate::sac::{AgentConfig, Algorithm, Augmentation, RunSettings};

/// Camera placement; the intrinsics follow from it and the image size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub eye: [f64; 3],
    pub target: [f64; 3],
    pub focal_scale: f64,
}

impl Default for CameraPose {
    fn default() -> Self {
        CameraPose {
            eye: DEFAULT_EYE,
            target: DEFAULT_TARGET,
            focal_scale: DEFAULT_FOCAL_SCALE,
        }
    }
}

/// Environment, agent and run settings of one experiment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub camera: CameraPose,
    pub agent: AgentConfig,
    pub run: RunSettings,
}

enum Problem {
    Unknown,
    Expected(&'static str),
    Invalid(String),
}

fn num<T: FromStr>(v: &str, what: &'static str) -> std::result::Result<T, Problem> {
    v.parse().map_err(|_| Problem::Expected(what))
}

fn real(v: &str) -> std::result::Result<f64, Problem> {
    num(v, "a real number")
}

fn uint<T: FromStr>(v: &str) -> std::result::Result<T, Problem> {
    num(v, "a non-negative integer")
}

fn list<T: FromStr>(v: &str, what: &'static str) -> std::result::Result<Vec<T>, Problem> {
    v.split(',').map(|s| num(s.trim(), what)).collect()
}

fn vec3(v: &str) -> std::result::Result<[f64; 3], Problem> {
    let xs: Vec<f64> = list(v, "three comma-separated reals")?;
    xs.try_into().map_err(|_| Problem::Expected("three comma-separated reals"))
}

fn parsed<T: FromStr<Err = Error>>(v: &str) -> std::result::Result<T, Problem> {
    v.parse().map_err(|e: Error| Problem::Invalid(e.to_string()))
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), Problem> {
        let (e, a, r) = (&mut self.env, &mut self.agent, &mut self.run);
        match key {
            "env.d_min" => e.d_min = real(v)?,
            "env.d_max" => e.d_max = real(v)?,
            "env.radius_min" => e.radius_min = real(v)?,
            "env.radius_max" => e.radius_max = real(v)?,
            "env.image_height" => e.image_height = uint(v)?,
            "env.image_width" => e.image_width = uint(v)?,
            "env.depth_clip" => e.depth_clip = real(v)?,
            "env.point_budget" => e.point_budget = uint(v)?,
            "env.modality" => e.obs_modality = parsed(v)?,
            "env.rng_seed" => e.rng_seed = uint(v)?,
            "env.light_dir" => e.light_dir = vec3(v)?,
            "env.ambient" => e.ambient = real(v)?,
            "env.camera_eye" => self.camera.eye = vec3(v)?,
            "env.camera_target" => self.camera.target = vec3(v)?,
            "env.focal_scale" => self.camera.focal_scale = real(v)?,
            "agent.lr" => a.hyper.lr = real(v)?,
            "agent.lr_alpha" => a.hyper.lr_alpha = real(v)?,
            "agent.gamma" => a.hyper.gamma = real(v)?,
            "agent.initial_temperature" => a.hyper.initial_temperature = real(v)?,
            "agent.target_update_interval" => a.hyper.target_update_interval = uint(v)?,
            "agent.actor_update_interval" => a.hyper.actor_update_interval = uint(v)?,
            "agent.tau_backbone" => a.hyper.tau_backbone = real(v)?,
            "agent.tau_heads" => a.hyper.tau_heads = real(v)?,
            "agent.warmup_steps" => a.hyper.warmup_steps = uint(v)?,
            "agent.batch_size" => a.hyper.batch_size = uint(v)?,
            "agent.buffer_capacity" => a.hyper.buffer_capacity = uint(v)?,
            "agent.target_entropy" => a.hyper.target_entropy = real(v)?,
            "agent.algorithm" => a.algorithm = parsed::<Algorithm>(v)?,
            "agent.drq_k" => a.drq.k = uint(v)?,
            "agent.drq_m" => a.drq.m = uint(v)?,
            "agent.augmentation" => a.drq.augmentation = parsed::<Augmentation>(v)?,
            "agent.point_widths" => a.point_widths = list(v, "comma-separated integers")?,
            "agent.embed_dim" => a.embed_dim = uint(v)?,
            "agent.hidden" => a.hidden = list(v, "comma-separated integers")?,
            "agent.frame_stack" => a.frame_stack = uint(v)?,
            "run.total_steps" => r.total_steps = uint(v)?,
            "run.eval_interval" => r.eval_interval = uint(v)?,
            "run.eval_episodes" => r.eval_episodes = uint(v)?,
            "run.checkpoint_interval" => r.checkpoint_interval = uint(v)?,
            "run.log_interval" => r.log_interval = uint(v)?,
            "run.seed" => r.seed = uint(v)?,
            "run.out_dir" => r.out_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            _ => return Err(Problem::Unknown),
        }
        Ok(())
    }

    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (e, h, a, r) = (&self.env, &self.agent.hyper, &self.agent, &self.run);
        vec![
            ("env.d_min", e.d_min.to_string()),
            ("env.d_max", e.d_max.to_string()),
            ("env.radius_min", e.radius_min.to_string()),
            ("env.radius_max", e.radius_max.to_string()),
            ("env.image_height", e.image_height.to_string()),
            ("env.image_width", e.image_width.to_string()),
            ("env.depth_clip", e.depth_clip.to_string()),
            ("env.point_budget", e.point_budget.to_string()),
            ("env.modality", e.obs_modality.to_string()),
            ("env.rng_seed", e.rng_seed.to_string()),
            ("env.light_dir", join(&e.light_dir)),
            ("env.ambient", e.ambient.to_string()),
            ("env.camera_eye", join(&self.camera.eye)),
            ("env.camera_target", join(&self.camera.target)),
            ("env.focal_scale", self.camera.focal_scale.to_string()),
            ("agent.lr", h.lr.to_string()),
            ("agent.lr_alpha", h.lr_alpha.to_string()),
            ("agent.gamma", h.gamma.to_string()),
            ("agent.initial_temperature", h.initial_temperature.to_string()),
            ("agent.target_update_interval", h.target_update_interval.to_string()),
            ("agent.actor_update_interval", h.actor_update_interval.to_string()),
            ("agent.tau_backbone", h.tau_backbone.to_string()),
            ("agent.tau_heads", h.tau_heads.to_string()),
            ("agent.warmup_steps", h.warmup_steps.to_string()),
            ("agent.batch_size", h.batch_size.to_string()),
            ("agent.buffer_capacity", h.buffer_capacity.to_string()),
            ("agent.target_entropy", h.target_entropy.to_string()),
            ("agent.algorithm", a.algorithm.to_string()),
            ("agent.drq_k", a.drq.k.to_string()),
            ("agent.drq_m", a.drq.m.to_string()),
            ("agent.augmentation", a.drq.augmentation.to_string()),
            ("agent.point_widths", join(&a.point_widths)),
            ("agent.embed_dim", a.embed_dim.to_string()),
            ("agent.hidden", join(&a.hidden)),
            ("agent.frame_stack", a.frame_stack.to_string()),
            ("run.total_steps", r.total_steps.to_string()),
            ("run.eval_interval", r.eval_interval.to_string()),
            ("run.eval_episodes", r.eval_episodes.to_string()),
            ("run.checkpoint_interval", r.checkpoint_interval.to_string()),
            ("run.log_interval", r.log_interval.to_string()),
            ("run.seed", r.seed.to_string()),
            (
                "run.out_dir",
                r.out_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
        ]
    }

    /// Applies one `section.key=value` assignment; `line` is used in errors.
    pub fn apply(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let at = if line > 0 { format!("line {line}: ") } else { String::new() };
        self.set(key, value).map_err(|p| {
            Error::Config(match p {
                Problem::Unknown => format!("{at}unknown key `{key}`"),
                Problem::Expected(what) => format!("{at}`{key}` expects {what}, got `{value}`"),
                Problem::Invalid(msg) => format!("{at}`{key}`: {msg}"),
            })
        })
    }

    /// Applies a `section.key=value` override given outside a file.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form section.key=value")))?;
        self.apply(k.trim(), v.trim(), 0)
    }

    /// Rebuilds the camera from the pose and image size, then validates.
    pub fn finalize(&mut self) -> Result<()> {
        let (e, c) = (&mut self.env, &self.camera);
        e.camera = pose_camera(c.eye, c.target, c.focal_scale, e.image_width, e.image_height)?;
        self.env.validate()?;
        self.agent.validate()?;
        self.run.validate()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// Reads and parses a configuration file, then applies `overrides`.
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_config_with(&text, overrides)
    }
}

/// Parses configuration text on top of the defaults and validates the result.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with(text, &[])
}

/// [`parse_config`] with `section.key=value` overrides applied after the text.
pub fn parse_config_with(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `section.key = value`", i + 1)))?;
        cfg.apply(k.trim(), v.trim(), i + 1)?;
    }
    for o in overrides {
        cfg.apply_override(o)?;
    }
    cfg.finalize()?;
    Ok(cfg)
}
