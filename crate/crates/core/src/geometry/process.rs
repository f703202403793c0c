use rand::seq::index;
use rand::Rng as _;

use super::{CameraModel, PointCloud};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Row-major `H × W × C` image of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Raster {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Raster {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn at(&self, v: usize, u: usize) -> &[f64] {
        let i = (v * self.width + u) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn at_mut(&mut self, v: usize, u: usize) -> &mut [f64] {
        let i = (v * self.width + u) * self.channels;
        &mut self.data[i..i + self.channels]
    }
}

/// Lifts every valid depth pixel to a world point carrying its RGB.
/// Depth is camera-frame z; values ≤ 0 or non-finite mean "no surface".
pub fn back_project(depth: &Raster, rgb: &Raster, cam: &CameraModel) -> Result<PointCloud> {
    if depth.channels != 1 || rgb.channels != 3 {
        return Err(Error::dim(format!(
            "back-projection needs 1 depth and 3 color channels, got {} and {}",
            depth.channels, rgb.channels
        )));
    }
    if (depth.height, depth.width) != (rgb.height, rgb.width) {
        return Err(Error::dim(format!(
            "depth {}×{} vs rgb {}×{}",
            depth.height, depth.width, rgb.height, rgb.width
        )));
    }
    let mut cloud = PointCloud::empty(3);
    for v in 0..depth.height {
        for u in 0..depth.width {
            let z = depth.at(v, u)[0];
            if !(z.is_finite() && z > 0.0) {
                continue;
            }
            let p = cam.unproject(u as f64, v as f64, z);
            cloud.push([p.x, p.y, p.z], rgb.at(v, u));
        }
    }
    Ok(cloud)
}

/// Keeps points within `threshold` (euclidean) of the camera center.
pub fn depth_clip(pc: &PointCloud, cam: &CameraModel, threshold: f64) -> PointCloud {
    let c = cam.center();
    let t2 = threshold * threshold;
    pc.filter(|p, _| {
        let d = [p[0] - c.x, p[1] - c.y, p[2] - c.z];
        d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= t2
    })
}

/// Splits off ground points: those with `z < min_z + tolerance`.
pub fn ground_split(pc: &PointCloud, tolerance: f64) -> Result<(PointCloud, PointCloud)> {
    if pc.is_empty() {
        return Err(Error::Domain("ground split of an empty cloud".into()));
    }
    let min_z = pc.coords().iter().map(|p| p[2]).fold(f64::INFINITY, f64::min);
    let cut = min_z + tolerance;
    let ground: Vec<usize> = (0..pc.len()).filter(|&i| pc.coords()[i][2] < cut).collect();
    let body: Vec<usize> = (0..pc.len()).filter(|&i| pc.coords()[i][2] >= cut).collect();
    Ok((pc.select(&ground), pc.select(&body)))
}

/// Resamples to exactly `target` points: uniform sampling without replacement
/// when there are at least `target` points, otherwise the originals followed
/// by uniformly drawn duplicates. An empty cloud becomes `target` zero points.
pub fn sample_or_pad(pc: &PointCloud, target: usize, rng: &mut Rng) -> Result<PointCloud> {
    if target == 0 {
        return Err(Error::Domain("target point count must be positive".into()));
    }
    let n = pc.len();
    if n == 0 {
        let mut out = PointCloud::empty(pc.feature_width());
        let zeros = vec![0.0; pc.feature_width()];
        for _ in 0..target {
            out.push([0.0; 3], &zeros);
        }
        return Ok(out);
    }
    let idx: Vec<usize> = if n >= target {
        index::sample(rng, n, target).into_vec()
    } else {
        (0..n)
            .chain((n..target).map(|_| rng.random_range(0..n)))
            .collect()
    };
    Ok(pc.select(&idx))
}

/// Concatenates frames along the point axis, appending a one-hot frame
/// indicator as the last `K` feature columns.
pub fn stack_frames(frames: &[PointCloud]) -> Result<PointCloud> {
    let first = frames
        .first()
        .ok_or_else(|| Error::dim("frame stacking needs at least one frame"))?;
    let width = first.feature_width();
    if let Some(f) = frames.iter().find(|f| f.feature_width() != width) {
        return Err(Error::dim(format!(
            "frames have feature widths {width} and {}",
            f.feature_width()
        )));
    }
    let k = frames.len();
    let mut out = PointCloud::empty(width + k);
    let mut row = vec![0.0; width + k];
    for (fi, frame) in frames.iter().enumerate() {
        for i in 0..frame.len() {
            row[..width].copy_from_slice(frame.point_features(i));
            row[width..].fill(0.0);
            row[width + fi] = 1.0;
            out.push(frame.coords()[i], &row);
        }
    }
    Ok(out)
}
