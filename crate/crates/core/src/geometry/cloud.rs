use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Ordered points with per-point features. The feature layout is
/// `[RGB | masks | frame one-hots]`; the RGB block, when present, is first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    coords: Vec<[f64; 3]>,
    features: Vec<f64>,
    feature_width: usize,
}

impl PointCloud {
    pub fn new(coords: Vec<[f64; 3]>, features: Vec<f64>, feature_width: usize) -> Result<Self> {
        if features.len() != coords.len() * feature_width {
            return Err(Error::dim(format!(
                "{} points with feature width {feature_width} need {} feature values, got {}",
                coords.len(),
                coords.len() * feature_width,
                features.len()
            )));
        }
        Ok(PointCloud {
            coords,
            features,
            feature_width,
        })
    }

    pub fn empty(feature_width: usize) -> Self {
        PointCloud {
            coords: Vec::new(),
            features: Vec::new(),
            feature_width,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    /// Width of one point row fed to an encoder: 3 coordinates plus features.
    pub fn channels(&self) -> usize {
        3 + self.feature_width
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.coords
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut [f64] {
        &mut self.features
    }

    pub fn point_features(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_width..(i + 1) * self.feature_width]
    }

    pub fn push(&mut self, p: [f64; 3], features: &[f64]) {
        assert_eq!(features.len(), self.feature_width, "feature width mismatch");
        self.coords.push(p);
        self.features.extend_from_slice(features);
    }

    /// New cloud made of the points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let mut out = PointCloud::empty(self.feature_width);
        out.coords.reserve(indices.len());
        for &i in indices {
            out.push(self.coords[i], self.point_features(i));
        }
        out
    }

    /// Keeps the points for which `keep` holds, preserving order.
    pub fn filter(&self, mut keep: impl FnMut(&[f64; 3], &[f64]) -> bool) -> PointCloud {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| keep(&self.coords[i], self.point_features(i)))
            .collect();
        self.select(&idx)
    }

    /// Row-major `N × (3 + C')` values: coordinates then features.
    pub fn rows<T: crate::autodiff::Float>(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.len() * self.channels());
        for i in 0..self.len() {
            out.extend(self.coords[i].iter().map(|&v| T::of(v)));
            out.extend(self.point_features(i).iter().map(|&v| T::of(v)));
        }
        out
    }

    /// Debug dump: a header line `N C'`, then `x y z f1 … fC'` per point with
    /// 9 significant digits.
    pub fn to_dump(&self) -> String {
        let mut s = format!("{} {}\n", self.len(), self.feature_width);
        for i in 0..self.len() {
            let vals = self.coords[i].iter().chain(self.point_features(i));
            let line: Vec<String> = vals.map(|v| format!("{v:.8e}")).collect();
            writeln!(s, "{}", line.join(" ")).unwrap();
        }
        s
    }

    pub fn from_dump(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let bad = |what: &str| Error::Input(format!("point dump: {what}"));
        let header = lines.next().ok_or_else(|| bad("missing header"))?;
        let mut h = header.split_whitespace().map(str::parse::<usize>);
        let (n, c) = match (h.next(), h.next(), h.next()) {
            (Some(Ok(n)), Some(Ok(c)), None) => (n, c),
            _ => return Err(bad("malformed header")),
        };
        let mut cloud = PointCloud::empty(c);
        for _ in 0..n {
            let line = lines.next().ok_or_else(|| bad("too few point lines"))?;
            let vals = line
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad("unparsable value"))?;
            if vals.len() != 3 + c {
                return Err(bad("wrong number of values on a point line"));
            }
            cloud.push([vals[0], vals[1], vals[2]], &vals[3..]);
        }
        Ok(cloud)
    }
}
