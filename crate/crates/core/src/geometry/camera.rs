use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Pinhole camera: intrinsics in pixels plus a rigid world→camera transform.
///
/// The camera frame has x to the right, y down the image and z along the
/// optical axis, so a visible point has positive camera z.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World→camera rotation.
    pub rotation: Matrix3<f64>,
    /// Camera-frame translation: `q = rotation·p + translation`.
    pub translation: Vector3<f64>,
    pub width: usize,
    pub height: usize,
}

/// Result of projecting a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Visible { u: f64, v: f64, z: f64 },
    Behind,
}

impl CameraModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = CameraModel {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, with `up` projecting to image-up.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Config("camera eye coincides with its target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Config("camera up vector is parallel to the view".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(fx, fy, cx, cy, rotation, translation, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if ortho > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(
                "camera rotation must be orthonormal with determinant +1".into(),
            ));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(0.0 <= self.cx && self.cx < self.width as f64 && 0.0 <= self.cy && self.cy < self.height as f64) {
            return Err(Error::Config(format!(
                "principal point ({}, {}) outside the {}×{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_world(&self, q: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (q - self.translation)
    }

    pub fn project_point(&self, p: &Vector3<f64>) -> Projection {
        let q = self.to_camera(p);
        if q.z <= 0.0 {
            return Projection::Behind;
        }
        Projection::Visible {
            u: self.fx * q.x / q.z + self.cx,
            v: self.fy * q.y / q.z + self.cy,
            z: q.z,
        }
    }

    /// World point seen at pixel `(u, v)` with camera-frame depth `z`.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        let q = Vector3::new((u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z);
        self.to_world(&q)
    }

    /// Unit world-frame direction of the ray through pixel `(u, v)`, and the
    /// camera-z component of that direction (for converting ray length to depth).
    pub fn pixel_ray(&self, u: f64, v: f64) -> (Vector3<f64>, f64) {
        let q = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        let n = q.norm();
        (self.rotation.transpose() * (q / n), 1.0 / n)
    }
}
