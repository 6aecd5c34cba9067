//! Small vector helpers and the sphere/hemisphere warps shared by the
//! renderer and the Monte-Carlo oracles.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance used when validating that a caller-supplied vector is unit length.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// A unit-length direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Direction(Vec3);

impl Direction {
    pub const X: Direction = Direction(Vec3::new(1.0, 0.0, 0.0));
    pub const Y: Direction = Direction(Vec3::new(0.0, 1.0, 0.0));
    pub const Z: Direction = Direction(Vec3::new(0.0, 0.0, 1.0));

    /// Normalizes `v`. Fails on zero or non-finite input.
    pub fn normalize(v: Vec3) -> Result<Self> {
        let n = v.norm();
        if !n.is_finite() || n < 1e-300 {
            return Err(Error::invalid(format!("cannot normalize vector {v:?}")));
        }
        Ok(Direction(v / n))
    }

    /// Accepts `v` only if it is already unit length within [`UNIT_TOLERANCE`].
    /// The stored value is renormalized so the invariant holds to rounding.
    pub fn from_unit(v: Vec3) -> Result<Self> {
        let n = v.norm();
        if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::invalid(format!(
                "direction {v:?} is not unit length (norm {n})"
            )));
        }
        Ok(Direction(v / n))
    }

    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        Self::normalize(Vec3::new(x, y, z))
    }

    pub(crate) fn new_unchecked(v: Vec3) -> Self {
        Direction(v)
    }

    pub fn vec(&self) -> Vec3 {
        self.0
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn z(&self) -> f64 {
        self.0.z
    }

    pub fn dot(&self, other: &Direction) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn neg(&self) -> Direction {
        Direction(-self.0)
    }

    pub fn rotate(&self, r: &Mat3) -> Direction {
        Direction(r * self.0)
    }
}

impl TryFrom<[f64; 3]> for Direction {
    type Error = Error;

    fn try_from(v: [f64; 3]) -> Result<Self> {
        Direction::normalize(Vec3::new(v[0], v[1], v[2]))
    }
}

impl From<Direction> for [f64; 3] {
    fn from(d: Direction) -> Self {
        [d.0.x, d.0.y, d.0.z]
    }
}

/// Mirror reflection of `omega_o` about `n`: `2(ω_o·n)n − ω_o`.
pub fn reflect(omega_o: &Direction, n: &Direction) -> Direction {
    let v = 2.0 * omega_o.dot(n) * n.vec() - omega_o.vec();
    // |v| = |ω_o| for unit n, so only rounding needs fixing.
    Direction(v / v.norm())
}

/// Orthonormal tangent frame around `n` (Duff et al. 2017).
pub fn tangent_frame(n: &Vec3) -> (Vec3, Vec3) {
    let sign = 1.0_f64.copysign(n.z);
    let a = -1.0 / (sign + n.z);
    let b = n.x * n.y * a;
    let t = Vec3::new(1.0 + sign * n.x * n.x * a, sign * b, -sign * n.x);
    let s = Vec3::new(b, sign + n.y * n.y * a, -n.y);
    (t, s)
}

/// Maps a direction expressed around +z into the frame whose +z is `axis`.
pub fn local_to_world(local: &Vec3, axis: &Vec3) -> Vec3 {
    let (t, s) = tangent_frame(axis);
    t * local.x + s * local.y + axis * local.z
}

fn from_cos_phi(cos_theta: f64, phi: f64) -> Vec3 {
    let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    Vec3::new(sin_theta * phi.cos(), sin_theta * phi.sin(), cos_theta)
}

/// Uniform direction on the sphere; pdf `1/(4π)`.
pub fn uniform_sphere(u1: f64, u2: f64) -> Vec3 {
    from_cos_phi(1.0 - 2.0 * u1, 2.0 * PI * u2)
}

/// Uniform direction on the +z hemisphere; pdf `1/(2π)`.
pub fn uniform_hemisphere(u1: f64, u2: f64) -> Vec3 {
    from_cos_phi(1.0 - u1, 2.0 * PI * u2)
}

/// Cosine-weighted direction on the +z hemisphere; pdf `cosθ/π`.
pub fn cosine_hemisphere(u1: f64, u2: f64) -> Vec3 {
    from_cos_phi((1.0 - u1).sqrt(), 2.0 * PI * u2)
}

/// Inverse CDF of the axial cosine of a vMF distribution with concentration
/// `kappa`: `w = 1 + ln(1 + (1−u)(e^{−2κ} − 1)) / κ`.
pub fn vmf_axial_cosine(u: f64, kappa: f64) -> f64 {
    let w = 1.0 + ((1.0 - u) * (-2.0 * kappa).exp_m1()).ln_1p() / kappa;
    w.clamp(-1.0, 1.0)
}

/// vMF sample around +z.
pub fn vmf_local(u1: f64, u2: f64, kappa: f64) -> Vec3 {
    from_cos_phi(vmf_axial_cosine(u1, kappa), 2.0 * PI * u2)
}

/// Sample around +z with pdf `(e+1)/(2π) cos^e θ` on the upper hemisphere.
pub fn cosine_power_local(u1: f64, u2: f64, exponent: f64) -> Vec3 {
    from_cos_phi(u1.powf(1.0 / (exponent + 1.0)), 2.0 * PI * u2)
}

/// `n` nearly-uniform points on the sphere (golden-angle spiral).
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5.0_f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            from_cos_phi(z, golden * i as f64)
        })
        .collect()
}

/// Rotation matrix from a (not necessarily normalized) quaternion `(w, x, y, z)`.
pub fn rotation_from_quaternion(q: [f64; 4]) -> Mat3 {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Position of a 1-D stratum sample: stratum `i` of `n`, jittered by `u`.
pub fn stratum(i: usize, n: usize, u: f64) -> f64 {
    (i as f64 + u) / n as f64
}
