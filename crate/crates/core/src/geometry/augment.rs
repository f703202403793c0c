use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng as _;

use super::PointCloud;
use crate::autodiff::Float;
use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};

/// Point-cloud augmentation families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentKind {
    Shift,
    RotateZ,
    Jitter,
    Color,
    Dropout,
    Identity,
}

impl fmt::Display for AugmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AugmentKind::Shift => "shift",
            AugmentKind::RotateZ => "rotate_z",
            AugmentKind::Jitter => "jitter",
            AugmentKind::Color => "color",
            AugmentKind::Dropout => "dropout",
            AugmentKind::Identity => "identity",
        })
    }
}

impl FromStr for AugmentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "shift" => AugmentKind::Shift,
            "rotate_z" => AugmentKind::RotateZ,
            "jitter" => AugmentKind::Jitter,
            "color" => AugmentKind::Color,
            "dropout" => AugmentKind::Dropout,
            "identity" => AugmentKind::Identity,
            other => {
                return Err(Error::Config(format!(
                    "unknown augmentation `{other}` (expected shift, rotate_z, jitter, color, dropout or identity)"
                )))
            }
        })
    }
}

impl AugmentKind {
    /// Default magnitude of each family.
    pub fn default_magnitude(self) -> f64 {
        match self {
            AugmentKind::Shift | AugmentKind::RotateZ => 0.15,
            AugmentKind::Jitter => 0.01,
            AugmentKind::Color => 0.5,
            AugmentKind::Dropout => 0.2,
            AugmentKind::Identity => 0.0,
        }
    }
}

/// One seeded augmentation. For `dropout` the magnitude is the removed
/// fraction; for `color` it is the jitter strength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentSpec {
    pub kind: AugmentKind,
    pub magnitude: f64,
    pub rng_seed: u64,
}

impl AugmentSpec {
    pub fn new(kind: AugmentKind, magnitude: f64, rng_seed: u64) -> Result<Self> {
        let spec = AugmentSpec {
            kind,
            magnitude,
            rng_seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn identity() -> Self {
        AugmentSpec {
            kind: AugmentKind::Identity,
            magnitude: 0.0,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate(self.kind, self.magnitude)
    }
}

fn validate(kind: AugmentKind, c: f64) -> Result<()> {
    if !(c.is_finite() && c >= 0.0) {
        return Err(Error::Domain(format!("{kind} magnitude must be finite and ≥ 0, got {c}")));
    }
    match kind {
        AugmentKind::Identity if c != 0.0 => {
            Err(Error::Domain(format!("identity augmentation takes magnitude 0, got {c}")))
        }
        AugmentKind::Dropout if c >= 1.0 => {
            Err(Error::Domain(format!("dropout fraction must be below 1, got {c}")))
        }
        AugmentKind::Color if c > 1.0 => {
            Err(Error::Domain(format!("color jitter strength must be ≤ 1, got {c}")))
        }
        _ => Ok(()),
    }
}

/// Applies `spec` with a generator seeded from `spec.rng_seed`.
pub fn augment(pc: &PointCloud, spec: &AugmentSpec) -> Result<PointCloud> {
    augment_with(pc, spec.kind, spec.magnitude, &mut seeded(spec.rng_seed))
}

/// Applies one augmentation drawing randomness from `rng`. A stacked
/// multi-frame cloud is transformed as one unit, so all frames move alike.
pub fn augment_with(pc: &PointCloud, kind: AugmentKind, c: f64, rng: &mut Rng) -> Result<PointCloud> {
    validate(kind, c)?;
    let mut out = pc.clone();
    match kind {
        AugmentKind::Identity => {}
        AugmentKind::Shift => {
            let d: [f64; 3] = std::array::from_fn(|_| rng.random_range(-c..=c));
            for p in out.coords_mut() {
                for k in 0..3 {
                    p[k] += d[k];
                }
            }
        }
        AugmentKind::RotateZ => {
            let (s, co) = rng.random_range(-c..=c).sin_cos();
            for p in out.coords_mut() {
                let [x, y, _] = *p;
                p[0] = co * x - s * y;
                p[1] = s * x + co * y;
            }
        }
        AugmentKind::Jitter => {
            for p in out.coords_mut() {
                for v in p.iter_mut() {
                    *v += rng.random_range(0.0..=c);
                }
            }
        }
        AugmentKind::Dropout => {
            let n = pc.len();
            if n > 0 {
                let removed = ((c * n as f64).round() as usize).min(n - 1);
                let mut keep = index::sample(rng, n, n - removed).into_vec();
                keep.sort_unstable();
                let survivors = keep.len();
                for _ in survivors..n {
                    keep.push(keep[rng.random_range(0..survivors)]);
                }
                out = pc.select(&keep);
            }
        }
        AugmentKind::Color => color_jitter(&mut out, c, rng)?,
    }
    Ok(out)
}

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn luminance(rgb: &[f64]) -> f64 {
    LUMA[0] * rgb[0] + LUMA[1] * rgb[1] + LUMA[2] * rgb[2]
}

fn clamp01(rgb: &mut [f64]) {
    rgb.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
}

fn color_jitter(pc: &mut PointCloud, c: f64, rng: &mut Rng) -> Result<()> {
    let w = pc.feature_width();
    if w < 3 {
        return Err(Error::Domain(format!(
            "color augmentation needs an RGB feature block, cloud has width {w}"
        )));
    }
    let brightness = rng.random_range(1.0 - c..=1.0 + c);
    let contrast = rng.random_range(1.0 - c..=1.0 + c);
    let saturation = rng.random_range(1.0 - c..=1.0 + c);
    let hue = rng.random_range(-c..=c) * PI;
    let n = pc.len();
    if n == 0 {
        return Ok(());
    }
    let feats = pc.features_mut();
    for i in 0..n {
        let rgb = &mut feats[i * w..i * w + 3];
        rgb.iter_mut().for_each(|v| *v *= brightness);
        clamp01(rgb);
    }
    let gray = (0..n).map(|i| luminance(&feats[i * w..i * w + 3])).sum::<f64>() / n as f64;
    for i in 0..n {
        let rgb = &mut feats[i * w..i * w + 3];
        rgb.iter_mut().for_each(|v| *v = gray + contrast * (*v - gray));
        clamp01(rgb);
        let l = luminance(rgb);
        rgb.iter_mut().for_each(|v| *v = l + saturation * (*v - l));
        clamp01(rgb);
        let (h, s, v) = rgb_to_hsv(rgb);
        let out = hsv_to_rgb((h + hue / (2.0 * PI)).rem_euclid(1.0), s, v);
        rgb.copy_from_slice(&out);
        clamp01(rgb);
    }
    Ok(())
}

/// Hue in [0,1), saturation and value in [0,1].
fn rgb_to_hsv(rgb: &[f64]) -> (f64, f64, f64) {
    let (r, g, b) = (rgb[0], rgb[1], rgb[2]);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h * 6.0;
    let sector = (h6.floor() as i64).rem_euclid(6);
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Translates one `C×H×W` image by `(dx, dy)` pixels (positive dx moves
/// content right, positive dy down), replicating edge pixels into the gap.
pub fn shift_image<T: Float>(img: &[T], channels: usize, height: usize, width: usize, dx: i64, dy: i64) -> Vec<T> {
    assert_eq!(img.len(), channels * height * width);
    let mut out = Vec::with_capacity(img.len());
    let (h, w) = (height as i64, width as i64);
    for ch in 0..channels {
        let plane = &img[ch * height * width..(ch + 1) * height * width];
        for y in 0..h {
            let sy = (y - dy).clamp(0, h - 1) as usize;
            for x in 0..w {
                let sx = (x - dx).clamp(0, w - 1) as usize;
                out.push(plane[sy * width + sx]);
            }
        }
    }
    out
}

/// Random integer translation per sample of a `B×C×H×W` batch, uniform in
/// `[−max_shift, max_shift]²`; every channel of a sample moves alike.
pub fn pixel_shift_augment<T: Float>(
    batch: &[T],
    shape: [usize; 4],
    max_shift: usize,
    rng: &mut Rng,
) -> Result<Vec<T>> {
    let [b, c, h, w] = shape;
    if batch.len() != b * c * h * w {
        return Err(Error::dim(format!("batch of {} values does not fit shape {shape:?}", batch.len())));
    }
    if max_shift >= h.min(w) {
        return Err(Error::Domain(format!("shift {max_shift} must be below the image extent {}", h.min(w))));
    }
    let m = max_shift as i64;
    let per = c * h * w;
    let mut out = Vec::with_capacity(batch.len());
    for s in 0..b {
        let dx = rng.random_range(-m..=m);
        let dy = rng.random_range(-m..=m);
        out.extend(shift_image(&batch[s * per..(s + 1) * per], c, h, w, dx, dy));
    }
    Ok(out)
}
