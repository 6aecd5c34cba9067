//! Signed-distance geometry: an analytic prior plus a learnable displacement.
//!
//! `SDF(x) = prior(x) + D(x)`, negative inside and positive outside, in
//! millimeters. `D` is either absent, a constant offset, or an MLP on a
//! frequency encoding of the position normalized to the bounding sphere Ω.

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::{Direction, Vec3};
use crate::nn::{self, Mlp};
use crate::tape::{Graph, Var};
use crate::{Error, Result};

/// Truncation range applied to SDF values consumed by the sphere tracer.
pub const SDF_TRUNCATION: f64 = 50.0;

/// Gradient norms below this are treated as degenerate.
pub const MIN_GRADIENT_NORM: f64 = 1e-8;

/// Frequency bands of the displacement encoding.
pub const ENCODING_BANDS: usize = 6;

/// The scene volume Ω.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundingSphere {
    pub center: [f64; 3],
    pub radius: f64,
}

impl BoundingSphere {
    pub fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    pub fn contains(&self, x: &Vec3, slack: f64) -> bool {
        (x - self.center()).norm() <= self.radius * (1.0 + slack)
    }

    /// Ray parameters `(t_in, t_out)` where the ray is inside Ω, if any.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let oc = origin - self.center();
        let b = oc.dot(dir);
        let c = oc.norm_squared() - self.radius * self.radius;
        let disc = b * b - c;
        if disc <= 0.0 {
            return None;
        }
        let s = disc.sqrt();
        let (t0, t1) = (-b - s, -b + s);
        if t1 <= 0.0 {
            return None;
        }
        Some((t0.max(0.0), t1))
    }

    /// Uniform samples in the ball.
    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<Vec3> {
        let c = self.center();
        (0..n)
            .map(|_| {
                let d = crate::math::uniform_sphere(rng.random(), rng.random());
                let r = self.radius * rng.random::<f64>().cbrt();
                c + d * r
            })
            .collect()
    }

    /// Maps positions to the unit ball frame used by network inputs.
    pub fn normalize(&self, x: &Array2<f64>) -> Array2<f64> {
        let c = ndarray::arr2(&[self.center]);
        (x - &c) / self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Blob {
    pub center: [f64; 3],
    pub radius: f64,
}

fn default_blend() -> f64 {
    10.0
}

/// Analytic SDF shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Prior {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// Scaled-sphere bound `min(r)·(|(x−c)/r| − 1)`: 1-Lipschitz with the
    /// exact zero set, but not a true distance away from the surface.
    Ellipsoid {
        center: [f64; 3],
        radii: [f64; 3],
    },
    /// Spheres joined by polynomial smooth-min with blend radius `blend`.
    Blobs {
        blobs: Vec<Blob>,
        #[serde(default = "default_blend")]
        blend: f64,
    },
}

fn sphere_sdf(x: &Vec3, c: &Vec3, r: f64) -> (f64, Vec3) {
    let d = x - c;
    let n = d.norm();
    let g = if n > 0.0 { d / n } else { Vec3::zeros() };
    (n - r, g)
}

// polynomial smooth-min; d/da = h, d/db = 1 − h
fn smooth_min(a: (f64, Vec3), b: (f64, Vec3), k: f64) -> (f64, Vec3) {
    let h = (0.5 + 0.5 * (b.0 - a.0) / k).clamp(0.0, 1.0);
    let v = b.0 * (1.0 - h) + a.0 * h - k * h * (1.0 - h);
    (v, a.1 * h + b.1 * (1.0 - h))
}

impl Prior {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Prior::Sphere { radius, .. } => *radius > 0.0,
            Prior::Ellipsoid { radii, .. } => radii.iter().all(|r| *r > 0.0),
            Prior::Blobs { blobs, blend } => !blobs.is_empty() && *blend > 0.0 && blobs.iter().all(|b| b.radius > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("prior radii and blend must be positive"))
        }
    }

    /// Value and gradient at `x`.
    pub fn eval(&self, x: &Vec3) -> (f64, Vec3) {
        match self {
            Prior::Sphere { center, radius } => sphere_sdf(x, &Vec3::from(*center), *radius),
            Prior::Ellipsoid { center, radii } => {
                let r = Vec3::from(*radii);
                let m = r.min();
                let q = (x - Vec3::from(*center)).component_div(&r);
                let n = q.norm();
                let g = if n > 0.0 { (q / n).component_div(&r) * m } else { Vec3::zeros() };
                (m * (n - 1.0), g)
            }
            Prior::Blobs { blobs, blend } => {
                let mut acc = sphere_sdf(x, &Vec3::from(blobs[0].center), blobs[0].radius);
                for b in &blobs[1..] {
                    acc = smooth_min(acc, sphere_sdf(x, &Vec3::from(b.center), b.radius), *blend);
                }
                acc
            }
        }
    }

    /// Step scale that keeps sphere tracing conservative.
    pub fn trace_scale(&self) -> f64 {
        match self {
            Prior::Blobs { .. } => 0.9,
            _ => 1.0,
        }
    }
}

/// Prior plus the optional open-back half-space.
///
/// With `open_back = Some(z)`, everything behind the plane `z` (smaller z)
/// counts as inside: `min(shape, x_z − z)`. Rays that reach that region are
/// reported as unhit by the tracer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorShape {
    pub shape: Prior,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub open_back: Option<f64>,
}

impl PriorShape {
    pub fn new(shape: Prior) -> Self {
        PriorShape { shape, open_back: None }
    }

    /// Value, gradient, and whether the back plane is the active term.
    pub fn eval(&self, x: &Vec3) -> (f64, Vec3, bool) {
        let (v, g) = self.shape.eval(x);
        match self.open_back {
            Some(z) if x.z - z < v => (x.z - z, Vec3::z(), true),
            _ => (v, g, false),
        }
    }
}

/// Learnable displacement `D(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Displacement {
    None,
    Constant(f64),
    /// MLP on the frequency encoding of `(x − c)/R`.
    Network(Mlp),
}

/// Full signed distance field.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfField {
    pub prior: PriorShape,
    pub bounds: BoundingSphere,
    pub displacement: Displacement,
}

/// A point on the zero level set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub x: Vec3,
    pub n: Direction,
    pub sdf_value: f64,
}

/// Batched SDF values and gradients as graph nodes.
pub struct SdfVars {
    /// `[N × 1]`
    pub value: Var,
    /// `[N × 3]`
    pub gradient: Var,
    /// `[N × 1]` displacement alone, for the residual term.
    pub displacement: Var,
}

fn rows(points: &[Vec3]) -> Array2<f64> {
    Array2::from_shape_fn((points.len(), 3), |(i, j)| points[i][j])
}

impl SdfField {
    pub fn new(prior: PriorShape, bounds: BoundingSphere, displacement: Displacement) -> Self {
        SdfField { prior, bounds, displacement }
    }

    /// Input width expected by a displacement network.
    pub fn encoding_width() -> usize {
        6 * ENCODING_BANDS
    }

    /// `prior(x) + D(x)`.
    pub fn eval(&self, params: &[f64], x: &Vec3) -> f64 {
        self.eval_batch(params, std::slice::from_ref(x))[0]
    }

    /// Value clamped to the tracing range.
    pub fn eval_truncated(&self, params: &[f64], x: &Vec3) -> f64 {
        self.eval(params, x).clamp(-SDF_TRUNCATION, SDF_TRUNCATION)
    }

    pub fn eval_batch(&self, params: &[f64], xs: &[Vec3]) -> Vec<f64> {
        let mut out: Vec<f64> = xs.iter().map(|x| self.prior.eval(x).0).collect();
        match &self.displacement {
            Displacement::None => {}
            Displacement::Constant(c) => out.iter_mut().for_each(|v| *v += c),
            Displacement::Network(mlp) => {
                let xn = self.bounds.normalize(&rows(xs));
                let (enc, _) = nn::positional_encoding(&xn, ENCODING_BANDS);
                let d = mlp.eval_batch(params, &enc);
                for (v, dv) in out.iter_mut().zip(d.column(0)) {
                    *v += dv;
                }
            }
        }
        out
    }

    /// Values and exact gradients.
    pub fn eval_batch_with_gradient(&self, params: &[f64], xs: &[Vec3]) -> (Vec<f64>, Vec<Vec3>) {
        let mut vals = Vec::with_capacity(xs.len());
        let mut grads = Vec::with_capacity(xs.len());
        for x in xs {
            let (v, g, _) = self.prior.eval(x);
            vals.push(v);
            grads.push(g);
        }
        match &self.displacement {
            Displacement::None => {}
            Displacement::Constant(c) => vals.iter_mut().for_each(|v| *v += c),
            Displacement::Network(mlp) => {
                let xn = self.bounds.normalize(&rows(xs));
                let (enc, tangents) = nn::positional_encoding(&xn, ENCODING_BANDS);
                let inv_r = 1.0 / self.bounds.radius;
                let tangents: Vec<Array2<f64>> = tangents.into_iter().map(|t| t * inv_r).collect();
                let (d, dd) = mlp.eval_batch_tangents(params, &enc, &tangents);
                for i in 0..xs.len() {
                    vals[i] += d[[i, 0]];
                    for k in 0..3 {
                        grads[i][k] += dd[k][[i, 0]];
                    }
                }
            }
        }
        (vals, grads)
    }

    pub fn gradient(&self, params: &[f64], x: &Vec3) -> Vec3 {
        self.eval_batch_with_gradient(params, std::slice::from_ref(x)).1[0]
    }

    /// Unit normal `∇SDF/‖∇SDF‖`.
    pub fn normal(&self, params: &[f64], x: &Vec3) -> Result<Direction> {
        let g = self.gradient(params, x);
        let n = g.norm();
        if !(n > MIN_GRADIENT_NORM) {
            return Err(Error::DegenerateGradient(n));
        }
        Ok(Direction::new_unchecked(g / n))
    }

    /// Records values, gradients and displacement for `xs` on `g`.
    ///
    /// The positions are constants; gradients stay differentiable with
    /// respect to the displacement weights.
    pub fn eval_graph(&self, g: &mut Graph, xs: &[Vec3]) -> SdfVars {
        let n = xs.len();
        let mut pv = Array2::zeros((n, 1));
        let mut pg = Array2::zeros((n, 3));
        for (i, x) in xs.iter().enumerate() {
            let (v, gr, _) = self.prior.eval(x);
            pv[[i, 0]] = v;
            for k in 0..3 {
                pg[[i, k]] = gr[k];
            }
        }
        let (disp, dgrad) = match &self.displacement {
            Displacement::None => (g.constant(Array2::zeros((n, 1))), None),
            Displacement::Constant(c) => (g.constant(Array2::from_elem((n, 1), *c)), None),
            Displacement::Network(mlp) => {
                let xn = self.bounds.normalize(&rows(xs));
                let (enc, tangents) = nn::positional_encoding(&xn, ENCODING_BANDS);
                let inv_r = 1.0 / self.bounds.radius;
                let e = g.constant(enc);
                let t: Vec<Var> = tangents.into_iter().map(|t| g.constant(t * inv_r)).collect();
                let (d, dd) = mlp.forward_tangents(g, e, &t);
                (d, Some(g.concat_cols(&dd)))
            }
        };
        let pv = g.constant(pv);
        let pg = g.constant(pg);
        let value = g.add(pv, disp);
        let gradient = match dgrad {
            Some(dg) => g.add(pg, dg),
            None => pg,
        };
        SdfVars {
            value,
            gradient,
            displacement: disp,
        }
    }

    /// Mean `|‖∇SDF‖ − 1|` over `xs` without a graph.
    pub fn eikonal_residual(&self, params: &[f64], xs: &[Vec3]) -> f64 {
        let (_, g) = self.eval_batch_with_gradient(params, xs);
        g.iter().map(|v| (v.norm() - 1.0).abs()).sum::<f64>() / xs.len().max(1) as f64
    }
}

/// Points where `SDF` changes sign along radial rays from `center`, found
/// by bisection. Used as a root-finding oracle.
pub fn radial_roots(field: &SdfField, params: &[f64], center: &Vec3, dirs: &[Vec3], r_max: f64) -> Vec<Option<f64>> {
    dirs.iter()
        .map(|d| {
            let f = |r: f64| field.eval(params, &(center + d * r));
            let (mut lo, mut hi) = (0.0, r_max);
            if f(lo).signum() == f(hi).signum() {
                return None;
            }
            let s_lo = f(lo).signum();
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(mid).signum() == s_lo {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Some(0.5 * (lo + hi))
        })
        .collect()
}

/// Stacks points into a `[N × 3]` array.
pub fn points_to_array(xs: &[Vec3]) -> Array2<f64> {
    rows(xs)
}

/// Splits a `[N × 3]` array back into points.
pub fn array_to_points(a: &Array2<f64>) -> Vec<Vec3> {
    a.axis_iter(Axis(0)).map(|r| Vec3::new(r[0], r[1], r[2])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Init, MlpSpec};
    use crate::rng;
    use crate::tape::ParamTape;
    use approx::assert_relative_eq;

    fn sphere(r: f64) -> SdfField {
        SdfField::new(
            PriorShape::new(Prior::Sphere {
                center: [0.0; 3],
                radius: r,
            }),
            BoundingSphere {
                center: [0.0; 3],
                radius: 1.5 * r,
            },
            Displacement::None,
        )
    }

    #[test]
    fn sphere_values_and_sign() {
        let f = sphere(100.0);
        assert_eq!(f.eval(&[], &Vec3::zeros()), -100.0);
        assert!(f.eval(&[], &Vec3::new(0.0, 100.0, 0.0)).abs() < 1e-9);
        assert!(f.eval(&[], &Vec3::new(200.0, 0.0, 0.0)) > 0.0);
        let n = f.normal(&[], &Vec3::new(150.0, 0.0, 0.0)).unwrap();
        assert_eq!(n.vec(), Vec3::x());
        assert!(matches!(f.normal(&[], &Vec3::zeros()), Err(Error::DegenerateGradient(_))));
    }

    #[test]
    fn constant_displacement_shrinks_radius() {
        let mut f = sphere(100.0);
        f.displacement = Displacement::Constant(2.0);
        let dirs = crate::math::fibonacci_sphere(20);
        for r in radial_roots(&f, &[], &Vec3::zeros(), &dirs, 140.0) {
            assert_relative_eq!(r.unwrap(), 98.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn blob_gradient_matches_finite_differences() {
        let p = Prior::Blobs {
            blobs: vec![
                Blob {
                    center: [-20.0, 0.0, 0.0],
                    radius: 40.0,
                },
                Blob {
                    center: [25.0, 5.0, 0.0],
                    radius: 30.0,
                },
            ],
            blend: 10.0,
        };
        let mut r = rng::stream(1, 0);
        for _ in 0..50 {
            let x = Vec3::new(r.random_range(-80.0..80.0), r.random_range(-80.0..80.0), r.random_range(-80.0..80.0));
            let (_, g) = p.eval(&x);
            for k in 0..3 {
                let mut e = Vec3::zeros();
                e[k] = 1e-4;
                let fd = (p.eval(&(x + e)).0 - p.eval(&(x - e)).0) / 2e-4;
                assert!((fd - g[k]).abs() < 1e-6);
            }
            assert!(g.norm() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn network_graph_matches_batch_path() {
        let mut tape = ParamTape::new();
        let spec = MlpSpec {
            sizes: vec![SdfField::encoding_width(), 16, 16, 1],
            activation: Activation::Softplus { beta: 10.0 },
            init: Init::Xavier,
            zero_last: false,
        };
        let mlp = Mlp::register(&mut tape, "disp", "geometry", spec, &mut rng::stream(2, 0));
        let mut f = sphere(100.0);
        f.displacement = Displacement::Network(mlp);
        let xs = f.bounds.sample(&mut rng::stream(3, 0), 10);
        let (v, gr) = f.eval_batch_with_gradient(tape.values(), &xs);
        let mut g = Graph::new(&tape);
        let vars = f.eval_graph(&mut g, &xs);
        for i in 0..xs.len() {
            assert_relative_eq!(g.value(vars.value)[[i, 0]], v[i], epsilon = 1e-12);
            for k in 0..3 {
                assert_relative_eq!(g.value(vars.gradient)[[i, k]], gr[i][k], epsilon = 1e-12);
            }
        }
        for (x, gx) in xs.iter().zip(&gr) {
            for k in 0..3 {
                let mut e = Vec3::zeros();
                e[k] = 1e-3;
                let fd = (f.eval(tape.values(), &(x + e)) - f.eval(tape.values(), &(x - e))) / 2e-3;
                assert!((fd - gx[k]).abs() <= 1e-4 * gx[k].abs().max(1e-2));
            }
        }
    }

    #[test]
    fn open_back_plane_is_inside() {
        let mut f = sphere(100.0);
        f.prior.open_back = Some(-10.0);
        assert!(f.eval(&[], &Vec3::new(120.0, 0.0, -50.0)) < 0.0);
        let (_, _, back) = f.prior.eval(&Vec3::new(0.0, 0.0, -100.0));
        assert!(back);
    }
}
