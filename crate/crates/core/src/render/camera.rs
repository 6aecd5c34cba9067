//! Pinhole cameras and primary rays.

use serde::{Deserialize, Serialize};

use crate::math::{Direction, Mat3, Vec3};
use crate::{Error, Result};

/// Ray `x(t) = origin + t·dir`, `t > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Direction,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir.vec() * t
    }
}

/// Pinhole camera. Camera axes: +x right, +y down, +z forward.
///
/// `rotation` is world-from-camera (row-major) and `position` the camera
/// center in millimeters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels.
    pub focal: f64,
    pub principal: [f64; 2],
    pub rotation: [[f64; 3]; 3],
    pub position: [f64; 3],
}

impl CameraModel {
    /// Camera at `position` looking at `target` with vertical field of view
    /// `fov_deg`. `up` fixes the roll.
    pub fn look_at(position: Vec3, target: Vec3, up: Vec3, width: usize, height: usize, fov_deg: f64) -> Result<Self> {
        let fwd = (target - position)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("camera target coincides with its position"))?;
        let right = fwd
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("camera up vector is parallel to the view direction"))?;
        let down = fwd.cross(&right);
        let focal = 0.5 * height as f64 / (0.5 * fov_deg.to_radians()).tan();
        let mut rotation = [[0.0; 3]; 3];
        for i in 0..3 {
            rotation[i] = [right[i], down[i], fwd[i]];
        }
        let cam = CameraModel {
            width,
            height,
            focal,
            principal: [0.5 * width as f64, 0.5 * height as f64],
            rotation,
            position: [position.x, position.y, position.z],
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        let r = &self.rotation;
        Mat3::new(r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2])
    }

    pub fn center(&self) -> Vec3 {
        Vec3::from(self.position)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera resolution must be positive"));
        }
        if !(self.focal > 0.0) {
            return Err(Error::invalid("camera focal length must be positive"));
        }
        let r = self.rotation_matrix();
        let err = (r.transpose() * r - Mat3::identity()).abs().max();
        if err > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("camera rotation is not orthonormal (error {err:e})")));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Ray through the center of pixel `(px, py)`.
    pub fn ray(&self, px: usize, py: usize) -> Ray {
        let d = Vec3::new(
            (px as f64 + 0.5 - self.principal[0]) / self.focal,
            (py as f64 + 0.5 - self.principal[1]) / self.focal,
            1.0,
        );
        let w = self.rotation_matrix() * d;
        Ray {
            origin: self.center(),
            dir: Direction::normalize(w).expect("finite pixel direction"),
        }
    }

    /// Ray for flat pixel index `i = py·width + px`.
    pub fn ray_index(&self, i: usize) -> Ray {
        self.ray(i % self.width, i / self.width)
    }

    /// Projects a world point to continuous pixel coordinates, if in front.
    pub fn project(&self, x: &Vec3) -> Option<(f64, f64)> {
        let c = self.rotation_matrix().transpose() * (x - self.center());
        if c.z <= 0.0 {
            return None;
        }
        Some((
            self.focal * c.x / c.z + self.principal[0],
            self.focal * c.y / c.z + self.principal[1],
        ))
    }
}

/// Cameras on a ring around `target` at `distance`, elevated by
/// `elevation_deg`, starting at azimuth `phase_deg`.
pub fn orbit(
    target: Vec3,
    distance: f64,
    count: usize,
    elevation_deg: f64,
    phase_deg: f64,
    resolution: usize,
    fov_deg: f64,
) -> Result<Vec<CameraModel>> {
    let el = elevation_deg.to_radians();
    (0..count)
        .map(|i| {
            let az = phase_deg.to_radians() + 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            let offset = Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos()) * distance;
            CameraModel::look_at(target + offset, target, Vec3::y(), resolution, resolution, fov_deg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn look_at_center_ray_hits_target() {
        let cam = CameraModel::look_at(Vec3::new(0.0, 0.0, 300.0), Vec3::zeros(), Vec3::y(), 64, 64, 40.0).unwrap();
        let r = cam.ray(32, 32);
        // pixel 32 is half a pixel off center
        assert!(r.dir.z() < -0.9999);
        let (u, v) = cam.project(&Vec3::zeros()).unwrap();
        assert_relative_eq!(u, 32.0, epsilon = 1e-9);
        assert_relative_eq!(v, 32.0, epsilon = 1e-9);
        let p = r.at(300.0);
        let (u, v) = cam.project(&p).unwrap();
        assert_relative_eq!(u, 32.5, epsilon = 1e-9);
        assert_relative_eq!(v, 32.5, epsilon = 1e-9);
    }

    #[test]
    fn rejects_bad_rotation() {
        let mut cam = CameraModel::look_at(Vec3::new(0.0, 0.0, 300.0), Vec3::zeros(), Vec3::y(), 8, 8, 40.0).unwrap();
        cam.rotation[0][0] *= 1.01;
        assert!(cam.validate().is_err());
    }
}
