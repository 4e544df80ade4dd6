use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orbit camera looking at `target`.
///
/// Azimuth 0 places the camera on the +z axis (the body's front); elevation
/// tilts it toward +y. `fov` is the vertical field of view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
    pub fov: f64,
    pub target: [f64; 3],
}

impl Camera {
    pub fn new(azimuth: f64, elevation: f64, distance: f64, fov: f64, target: [f64; 3]) -> Result<Self> {
        let cam = Self {
            azimuth,
            elevation,
            distance,
            fov,
            target,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.distance > 0.0 && self.distance.is_finite()) {
            return Err(Error::param(format!("camera distance must be > 0, got {}", self.distance)));
        }
        if !(self.fov > 0.0 && self.fov < std::f64::consts::PI) {
            return Err(Error::param(format!("field of view must lie in (0, pi), got {}", self.fov)));
        }
        if !(self.azimuth.is_finite() && self.elevation.is_finite()) || self.target.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("camera angles and target must be finite"));
        }
        Ok(())
    }

    pub fn target(&self) -> Vector3<f64> {
        Vector3::from(self.target)
    }

    pub fn position(&self) -> Vector3<f64> {
        let (se, ce) = self.elevation.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        self.target() + self.distance * Vector3::new(ce * sa, se, ce * ca)
    }

    /// `(forward, right, up)` unit vectors.
    pub fn basis(&self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let forward = (self.target() - self.position()).normalize();
        let right = forward.cross(&Vector3::y()).normalize();
        let up = right.cross(&forward);
        (forward, right, up)
    }

    fn half_extents(&self, height: usize, width: usize) -> (f64, f64) {
        let ty = (0.5 * self.fov).tan();
        (ty * width as f64 / height as f64, ty)
    }

    /// Unit ray direction through the center of pixel `(row, col)`.
    pub fn ray_dir(&self, row: usize, col: usize, height: usize, width: usize) -> Vector3<f64> {
        let (fwd, right, up) = self.basis();
        self.ray_dir_with(&fwd, &right, &up, row, col, height, width)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn ray_dir_with(
        &self,
        fwd: &Vector3<f64>,
        right: &Vector3<f64>,
        up: &Vector3<f64>,
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    ) -> Vector3<f64> {
        let (tx, ty) = self.half_extents(height, width);
        let sx = ((col as f64 + 0.5) / width as f64 * 2.0 - 1.0) * tx;
        let sy = (1.0 - (row as f64 + 0.5) / height as f64 * 2.0) * ty;
        (fwd + sx * right + sy * up).normalize()
    }

    /// Continuous pixel coordinates `(x, y)` and view depth of a world point;
    /// pixel `(row, col)` has its center at `(col + 0.5, row + 0.5)`.
    /// `None` for points at or behind the camera plane.
    pub fn project(&self, p: &Vector3<f64>, height: usize, width: usize) -> Option<(f64, f64, f64)> {
        let (fwd, right, up) = self.basis();
        let d = p - self.position();
        let z = d.dot(&fwd);
        if z <= 1e-9 {
            return None;
        }
        let (tx, ty) = self.half_extents(height, width);
        let sx = d.dot(&right) / (z * tx);
        let sy = d.dot(&up) / (z * ty);
        Some(((sx + 1.0) * 0.5 * width as f64, (1.0 - sy) * 0.5 * height as f64, z))
    }

    /// [`Camera::project`] plus the 2x3 Jacobian of `(x, y)` with respect to `p`.
    pub fn project_with_jacobian(
        &self,
        p: &Vector3<f64>,
        height: usize,
        width: usize,
    ) -> Option<((f64, f64, f64), [Vector3<f64>; 2])> {
        let (fwd, right, up) = self.basis();
        let d = p - self.position();
        let z = d.dot(&fwd);
        if z <= 1e-9 {
            return None;
        }
        let (tx, ty) = self.half_extents(height, width);
        let (dr, du) = (d.dot(&right), d.dot(&up));
        let x = (dr / (z * tx) + 1.0) * 0.5 * width as f64;
        let y = (1.0 - du / (z * ty)) * 0.5 * height as f64;
        let jx = (right / z - fwd * (dr / (z * z))) * (0.5 * width as f64 / tx);
        let jy = (up / z - fwd * (du / (z * z))) * (-0.5 * height as f64 / ty);
        Some(((x, y, z), [jx, jy]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_inverts_ray_generation() {
        let cam = Camera::new(0.7, 0.2, 3.0, 0.8, [0.1, -0.2, 0.0]).unwrap();
        let dir = cam.ray_dir(5, 3, 32, 16);
        let p = cam.position() + 2.5 * dir;
        let (x, y, _) = cam.project(&p, 32, 16).unwrap();
        assert!((x - 3.5).abs() < 1e-9 && (y - 5.5).abs() < 1e-9);
    }

    #[test]
    fn projection_jacobian_matches_finite_differences() {
        let cam = Camera::new(0.4, -0.1, 3.0, 0.7, [0.0, 0.2, 0.0]).unwrap();
        let p = Vector3::new(0.1, 0.3, -0.2);
        let (_, j) = cam.project_with_jacobian(&p, 64, 32).unwrap();
        for a in 0..3 {
            let mut e = Vector3::zeros();
            e[a] = 1e-6;
            let (xp, yp, _) = cam.project(&(p + e), 64, 32).unwrap();
            let (xm, ym, _) = cam.project(&(p - e), 64, 32).unwrap();
            assert!(((xp - xm) / 2e-6 - j[0][a]).abs() < 1e-5);
            assert!(((yp - ym) / 2e-6 - j[1][a]).abs() < 1e-5);
        }
    }

    #[test]
    fn front_camera_sits_on_positive_z() {
        let cam = Camera::new(0.0, 0.0, 2.0, 0.5, [0.0; 3]).unwrap();
        let pos = cam.position();
        assert!((pos.z - 2.0).abs() < 1e-12 && pos.x.abs() < 1e-12);
        let (_, right, up) = cam.basis();
        assert!((right.x - 1.0).abs() < 1e-12 && (up.y - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_poses() {
        assert!(Camera::new(0.0, 0.0, 0.0, 0.5, [0.0; 3]).is_err());
        assert!(Camera::new(0.0, 0.0, 1.0, std::f64::consts::PI, [0.0; 3]).is_err());
    }
}
