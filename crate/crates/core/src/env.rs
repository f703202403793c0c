//! The 3D reacher: a single-step continuous bandit in which a red sphere
//! must jump onto a green one, observed through an analytic ray-caster.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::geometry::{back_project, depth_clip, sample_or_pad, CameraModel, PointCloud, Projection, Raster};
use crate::rng::Rng;

/// Half-width of the cube `[−10, 10]³` holding both sphere centers.
pub const WORLD_HALF: f64 = 10.0;

const MAX_REJECTIONS: usize = 1_000_000;

/// What the agent sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Rgb,
    Rgbd,
    PointCloud,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::PointCloud, Modality::Rgbd, Modality::Rgb];

    pub fn is_image(self) -> bool {
        self != Modality::PointCloud
    }

    /// Channels of one image frame; zero for point clouds.
    pub fn image_channels(self) -> usize {
        match self {
            Modality::Rgb => 3,
            Modality::Rgbd => 4,
            Modality::PointCloud => 0,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Rgb => "rgb",
            Modality::Rgbd => "rgbd",
            Modality::PointCloud => "pointcloud",
        })
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(Modality::Rgb),
            "rgbd" => Ok(Modality::Rgbd),
            "pointcloud" => Ok(Modality::PointCloud),
            other => Err(Error::Config(format!(
                "unknown modality `{other}` (expected rgb, rgbd or pointcloud)"
            ))),
        }
    }
}

/// Environment parameters. The camera must be consistent with the image size.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub d_min: f64,
    pub d_max: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    pub image_height: usize,
    pub image_width: usize,
    pub camera: CameraModel,
    pub depth_clip: f64,
    pub point_budget: usize,
    pub obs_modality: Modality,
    pub rng_seed: u64,
    /// Unit direction towards the light.
    pub light_dir: [f64; 3],
    pub ambient: f64,
}

pub const DEFAULT_EYE: [f64; 3] = [0.0, -35.0, 12.0];
pub const DEFAULT_TARGET: [f64; 3] = [0.0, 0.0, 0.0];
pub const DEFAULT_FOCAL_SCALE: f64 = 0.9;

impl Default for EnvConfig {
    fn default() -> Self {
        let (h, w) = (84, 84);
        let l = Vector3::new(1.0, -1.0, 2.0).normalize();
        EnvConfig {
            d_min: 5.0,
            d_max: 15.0,
            radius_min: 0.5,
            radius_max: 2.0,
            image_height: h,
            image_width: w,
            camera: pose_camera(DEFAULT_EYE, DEFAULT_TARGET, DEFAULT_FOCAL_SCALE, w, h).expect("default camera"),
            depth_clip: 60.0,
            point_budget: 128,
            obs_modality: Modality::PointCloud,
            rng_seed: 0,
            light_dir: [l.x, l.y, l.z],
            ambient: 0.2,
        }
    }
}

/// Camera at `eye` looking at `target` with world z up, focal length
/// `focal_scale·width` and the principal point at the image center.
pub fn pose_camera(eye: [f64; 3], target: [f64; 3], focal_scale: f64, width: usize, height: usize) -> Result<CameraModel> {
    let f = focal_scale * width as f64;
    CameraModel::look_at(
        Vector3::from(eye),
        Vector3::from(target),
        Vector3::z(),
        f,
        f,
        width as f64 / 2.0,
        height as f64 / 2.0,
        width,
        height,
    )
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.d_min > 0.0 && self.d_min < self.d_max) {
            return bad(format!("need 0 < d_min < d_max, got {} and {}", self.d_min, self.d_max));
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max) {
            return bad(format!(
                "need 0 < radius_min ≤ radius_max, got {} and {}",
                self.radius_min, self.radius_max
            ));
        }
        if self.point_budget == 0 {
            return bad("point_budget must be at least 1".into());
        }
        if !(self.depth_clip > 0.0) {
            return bad(format!("depth_clip must be positive, got {}", self.depth_clip));
        }
        if !(0.0..=1.0).contains(&self.ambient) {
            return bad(format!("ambient must lie in [0, 1], got {}", self.ambient));
        }
        if (self.camera.width, self.camera.height) != (self.image_width, self.image_height) {
            return bad(format!(
                "camera is {}×{} but images are {}×{}",
                self.camera.width, self.camera.height, self.image_width, self.image_height
            ));
        }
        self.camera.validate()?;
        for corner in 0..8 {
            let c = |bit: usize| if corner >> bit & 1 == 1 { WORLD_HALF } else { -WORLD_HALF };
            let p = Vector3::new(c(0), c(1), c(2));
            let inside = match self.camera.project_point(&p) {
                Projection::Visible { u, v, .. } => {
                    (0.0..self.image_width as f64).contains(&u) && (0.0..self.image_height as f64).contains(&v)
                }
                Projection::Behind => false,
            };
            if !inside {
                return bad(format!("cube corner {:?} is outside the camera view", [p.x, p.y, p.z]));
            }
        }
        Ok(())
    }

    /// Policy outputs in (−1, 1)³ are multiplied by this.
    pub fn action_scale(&self) -> f64 {
        self.d_max
    }
}

/// Sphere centers and radii; `x0`/`r0` is the red agent, `x1`/`r1` the green target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReacherState {
    pub x0: [f64; 3],
    pub x1: [f64; 3],
    pub r0: f64,
    pub r1: f64,
}

impl ReacherState {
    pub fn distance(&self) -> f64 {
        norm(sub(self.x1, self.x0))
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Image frame stored as 16-bit fixed point in `[0, 1]`, channel-major
/// (`C×H×W`): RGB then, for RGB-D, depth scaled by `1/depth_clip`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageObs {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    data: Vec<u16>,
}

impl ImageObs {
    const SCALE: f64 = 65535.0;

    pub fn from_values(channels: usize, height: usize, width: usize, values: &[f64]) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(Error::dim(format!(
                "{} values for a {channels}×{height}×{width} image",
                values.len()
            )));
        }
        let data = values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * Self::SCALE).round() as u16)
            .collect();
        Ok(ImageObs {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn value(&self, i: usize) -> f64 {
        self.data[i] as f64 / Self::SCALE
    }

    pub fn raw(&self) -> &[u16] {
        &self.data
    }

    /// Concatenates frames along the channel axis, oldest first.
    pub fn stack(frames: &[&ImageObs]) -> Result<ImageObs> {
        let first = frames.first().ok_or_else(|| Error::dim("image stacking needs at least one frame"))?;
        if let Some(f) = frames.iter().find(|f| (f.height, f.width) != (first.height, first.width)) {
            return Err(Error::dim(format!(
                "frames of {}×{} and {}×{}",
                first.height, first.width, f.height, f.width
            )));
        }
        Ok(ImageObs {
            channels: frames.iter().map(|f| f.channels).sum(),
            height: first.height,
            width: first.width,
            data: frames.iter().flat_map(|f| f.data.iter().copied()).collect(),
        })
    }

    /// Appends the dequantized values to `out`.
    pub fn extend_into<T: crate::autodiff::Float>(&self, out: &mut Vec<T>) {
        out.extend(self.data.iter().map(|&q| T::of(q as f64 / Self::SCALE)));
    }
}

/// An observation in the configured modality.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Image(ImageObs),
    Cloud(PointCloud),
}

impl Observation {
    pub fn modality_name(&self) -> &'static str {
        match self {
            Observation::Image(_) => "image",
            Observation::Cloud(_) => "pointcloud",
        }
    }
}

/// Raw rendering: RGB in `[0,1]` and camera-frame depth, 0 for background.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendering {
    pub rgb: Raster,
    pub depth: Raster,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub done: bool,
    pub next_state: ReacherState,
    pub next_observation: Observation,
}

/// Draws a state: centers uniform in the cube, rejected until their distance
/// lies in `[d_min, d_max]`; radii uniform in `[radius_min, radius_max]`.
pub fn sample_state(cfg: &EnvConfig, rng: &mut Rng) -> Result<ReacherState> {
    let point = |rng: &mut Rng| -> [f64; 3] { std::array::from_fn(|_| rng.random_range(-WORLD_HALF..=WORLD_HALF)) };
    for _ in 0..MAX_REJECTIONS {
        let x0 = point(rng);
        let x1 = point(rng);
        let d = norm(sub(x1, x0));
        if cfg.d_min <= d && d <= cfg.d_max {
            let r0 = rng.random_range(cfg.radius_min..=cfg.radius_max);
            let r1 = rng.random_range(cfg.radius_min..=cfg.radius_max);
            return Ok(ReacherState { x0, x1, r0, r1 });
        }
    }
    Err(Error::Config(format!(
        "no state with distance in [{}, {}] after {MAX_REJECTIONS} draws",
        cfg.d_min, cfg.d_max
    )))
}

pub fn reset(cfg: &EnvConfig, rng: &mut Rng) -> Result<(ReacherState, Observation)> {
    let state = sample_state(cfg, rng)?;
    let obs = observe(&state, cfg, rng)?;
    Ok((state, obs))
}

/// Reward of moving the agent by `action`: minus the remaining distance.
pub fn reward(state: &ReacherState, action: [f64; 3]) -> f64 {
    let moved = [state.x0[0] + action[0], state.x0[1] + action[1], state.x0[2] + action[2]];
    -norm(sub(state.x1, moved))
}

/// Applies `action`; the episode always ends after this single step.
pub fn step(state: &ReacherState, action: [f64; 3], cfg: &EnvConfig, rng: &mut Rng) -> Result<StepResult> {
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::Input(format!("non-finite action {action:?}")));
    }
    let next_state = ReacherState {
        x0: [state.x0[0] + action[0], state.x0[1] + action[1], state.x0[2] + action[2]],
        ..*state
    };
    Ok(StepResult {
        reward: reward(state, action),
        done: true,
        next_observation: observe(&next_state, cfg, rng)?,
        next_state,
    })
}

/// Nearest positive ray parameter `t` with `|o + t·d − c| = r`.
fn ray_sphere(o: &Vector3<f64>, d: &Vector3<f64>, c: [f64; 3], r: f64) -> Option<f64> {
    let oc = o - Vector3::from(c);
    let a = d.dot(d);
    let b = oc.dot(d);
    let disc = b * b - a * (oc.dot(&oc) - r * r);
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let near = (-b - sq) / a;
    let far = (-b + sq) / a;
    if near > 0.0 {
        Some(near)
    } else if far > 0.0 {
        Some(far)
    } else {
        None
    }
}

/// Ray-casts both spheres through every pixel center.
pub fn render(state: &ReacherState, cfg: &EnvConfig) -> Rendering {
    let cam = &cfg.camera;
    let (h, w) = (cfg.image_height, cfg.image_width);
    let mut rgb = Raster::new(h, w, 3);
    let mut depth = Raster::new(h, w, 1);
    let origin = cam.center();
    let rt = cam.rotation.transpose();
    let light = Vector3::from(cfg.light_dir);
    let spheres = [(state.x0, state.r0, 0usize), (state.x1, state.r1, 1usize)];
    for v in 0..h {
        for u in 0..w {
            // camera-frame direction with unit z, so the ray parameter is the depth
            let dir = rt * Vector3::new((u as f64 - cam.cx) / cam.fx, (v as f64 - cam.cy) / cam.fy, 1.0);
            let hit = spheres
                .iter()
                .filter_map(|&(c, r, k)| ray_sphere(&origin, &dir, c, r).map(|t| (t, c, r, k)))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((t, c, r, k)) = hit {
                let p = origin + dir * t;
                let n = (p - Vector3::from(c)) / r;
                let shade = n.dot(&light).max(cfg.ambient);
                rgb.at_mut(v, u)[k] = shade.min(1.0);
                depth.at_mut(v, u)[0] = t;
            }
        }
    }
    Rendering { rgb, depth }
}

/// Renders and post-processes into the configured modality.
pub fn observe(state: &ReacherState, cfg: &EnvConfig, rng: &mut Rng) -> Result<Observation> {
    let Rendering { rgb, depth } = render(state, cfg);
    let (h, w) = (cfg.image_height, cfg.image_width);
    let planar = |raster: &Raster, c: usize, scale: f64, out: &mut Vec<f64>| {
        out.extend((0..h * w).map(|i| raster.data[i * raster.channels + c] * scale));
    };
    Ok(match cfg.obs_modality {
        Modality::PointCloud => {
            let raw = back_project(&depth, &rgb, &cfg.camera)?;
            let near = depth_clip(&raw, &cfg.camera, cfg.depth_clip);
            Observation::Cloud(sample_or_pad(&near, cfg.point_budget, rng)?)
        }
        m => {
            let mut vals = Vec::with_capacity(m.image_channels() * h * w);
            for c in 0..3 {
                planar(&rgb, c, 1.0, &mut vals);
            }
            if m == Modality::Rgbd {
                planar(&depth, 0, 1.0 / cfg.depth_clip, &mut vals);
            }
            Observation::Image(ImageObs::from_values(m.image_channels(), h, w, &vals)?)
        }
    })
}

/// ASCII `P3` pixmap with 8-bit samples.
pub fn to_ppm(rgb: &Raster) -> String {
    let mut s = format!("P3\n{} {}\n255\n", rgb.width, rgb.height);
    for v in 0..rgb.height {
        let row: Vec<String> = (0..rgb.width)
            .flat_map(|u| rgb.at(v, u)[..3].to_vec())
            .map(|x| ((x.clamp(0.0, 1.0) * 255.0).round() as u8).to_string())
            .collect();
        writeln!(s, "{}", row.join(" ")).unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn default_config_is_valid() {
        EnvConfig::default().validate().unwrap();
        let cam = &EnvConfig::default().camera;
        assert_eq!((cam.fx, cam.cx, cam.cy), (0.9 * 84.0, 42.0, 42.0));
        let c = cam.center();
        assert!((c - Vector3::new(0.0, -35.0, 12.0)).norm() < 1e-9);
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut cfg = EnvConfig::default();
        cfg.d_min = 20.0;
        assert!(cfg.validate().is_err());
        let mut cfg = EnvConfig::default();
        cfg.camera = pose_camera([0.0, -12.0, 0.0], [0.0; 3], 0.9, 84, 84).unwrap();
        assert!(cfg.validate().is_err(), "camera inside the cube");
        let mut cfg = EnvConfig::default();
        cfg.image_width = 64;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn infeasible_distance_range_is_a_config_error() {
        let cfg = EnvConfig {
            d_min: 40.0,
            d_max: 50.0,
            ..EnvConfig::default()
        };
        assert!(matches!(sample_state(&cfg, &mut seeded(0)), Err(Error::Config(_))));
    }

    #[test]
    fn resets_respect_constraints() {
        let cfg = EnvConfig::default();
        let mut rng = seeded(3);
        for _ in 0..1000 {
            let s = sample_state(&cfg, &mut rng).unwrap();
            assert!((5.0..=15.0).contains(&s.distance()));
            assert!(s.x0.iter().chain(&s.x1).all(|v| v.abs() <= 10.0));
            assert!((0.5..=2.0).contains(&s.r0) && (0.5..=2.0).contains(&s.r1));
        }
        assert_eq!(sample_state(&cfg, &mut seeded(4)).unwrap(), sample_state(&cfg, &mut seeded(4)).unwrap());
    }

    #[test]
    fn reward_cases() {
        let s = ReacherState {
            x0: [1.0, 2.0, 3.0],
            x1: [4.0, 6.0, 3.0],
            r0: 1.0,
            r1: 1.0,
        };
        assert_eq!(reward(&s, [3.0, 4.0, 0.0]), 0.0);
        assert_eq!(reward(&s, [0.0; 3]), -5.0);
        let cfg = EnvConfig::default();
        let r = step(&s, [0.5, 0.5, 0.5], &cfg, &mut seeded(0)).unwrap();
        assert!(r.done);
        assert_eq!(r.next_state.x0, [1.5, 2.5, 3.5]);
        assert!(step(&s, [f64::NAN, 0.0, 0.0], &cfg, &mut seeded(0)).is_err());
    }

    #[test]
    fn spheres_behind_the_camera_render_as_background() {
        let cfg = EnvConfig::default();
        let s = ReacherState {
            x0: [0.0, -60.0, 12.0],
            x1: [3.0, -70.0, 12.0],
            r0: 1.0,
            r1: 2.0,
        };
        let r = render(&s, &cfg);
        assert!(r.rgb.data.iter().all(|&v| v == 0.0));
        assert!(r.depth.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn image_observation_contract() {
        let mut cfg = EnvConfig::default();
        let mut rng = seeded(5);
        let s = sample_state(&cfg, &mut rng).unwrap();
        for m in [Modality::Rgb, Modality::Rgbd] {
            cfg.obs_modality = m;
            match observe(&s, &cfg, &mut rng).unwrap() {
                Observation::Image(img) => {
                    assert_eq!((img.channels, img.height, img.width), (m.image_channels(), 84, 84));
                    assert!((0..img.len()).all(|i| (0.0..=1.0).contains(&img.value(i))));
                    assert!((0..img.len()).any(|i| img.value(i) > 0.0));
                }
                other => panic!("unexpected {}", other.modality_name()),
            }
        }
    }

    #[test]
    fn ppm_header_and_size() {
        let mut r = Raster::new(2, 3, 3);
        r.at_mut(0, 0)[0] = 1.0;
        let ppm = to_ppm(&r);
        let mut lines = ppm.lines();
        assert_eq!(lines.next(), Some("P3"));
        assert_eq!(lines.next(), Some("3 2"));
        assert_eq!(lines.next(), Some("255"));
        assert!(lines.next().unwrap().starts_with("255 0 0 0"));
    }

    #[test]
    fn modality_names_round_trip() {
        for m in Modality::ALL {
            assert_eq!(m.to_string().parse::<Modality>().unwrap(), m);
        }
        assert!("depth".parse::<Modality>().is_err());
    }
}
