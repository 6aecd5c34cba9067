//! Real spherical harmonics, half-cosine convolution and vMF prefiltering.
//!
//! Basis convention: orthonormal real SH without the Condon–Shortley phase.
//! Coefficient `(l, m)` with `-l <= m <= l` lives at flat index
//! `l*l + l + m`, so band `l` occupies `l*l .. (l+1)*(l+1)`.
//!
//! For `m > 0`: `Y_lm = √2 K_lm P_l^m(cosθ) cos(mφ)`, for `m < 0`:
//! `Y_lm = √2 K_l|m| P_l^|m|(cosθ) sin(|m|φ)`, and `Y_l0 = K_l0 P_l(cosθ)`,
//! with `K_lm = sqrt((2l+1)/(4π) (l-m)!/(l+m)!)`. The evaluation is done in
//! Cartesian form so it can be differentiated with [`Dual3`].

use std::f64::consts::{PI, SQRT_2};
use std::ops::{Add, Mul, Sub};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::math::{uniform_sphere, Direction, Vec3};
use crate::rng;
use crate::{Error, Result};

pub type Rgb = [f64; 3];

/// Highest band supported by the precomputed normalization table.
pub const MAX_L: usize = 20;

/// Band limit used when none is configured.
pub const DEFAULT_L_MAX: usize = 10;

pub fn sh_count(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 1)
}

pub fn sh_index(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m) as usize
}

/// Band `l` of flat index `k`.
pub fn band_of(k: usize) -> usize {
    (k as f64).sqrt().floor() as usize
}

/// Scalar type the SH recurrences can be evaluated over.
pub trait ShScalar: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> {
    fn constant(c: f64) -> Self;
    fn scale(self, c: f64) -> Self;
}

impl ShScalar for f64 {
    fn constant(c: f64) -> Self {
        c
    }
    fn scale(self, c: f64) -> Self {
        self * c
    }
}

/// Forward-mode dual number carrying derivatives with respect to x, y, z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual3 {
    pub v: f64,
    pub d: [f64; 3],
}

impl Dual3 {
    pub fn var(v: f64, axis: usize) -> Self {
        let mut d = [0.0; 3];
        d[axis] = 1.0;
        Dual3 { v, d }
    }
}

impl Add for Dual3 {
    type Output = Dual3;
    fn add(self, o: Dual3) -> Dual3 {
        Dual3 {
            v: self.v + o.v,
            d: [self.d[0] + o.d[0], self.d[1] + o.d[1], self.d[2] + o.d[2]],
        }
    }
}

impl Sub for Dual3 {
    type Output = Dual3;
    fn sub(self, o: Dual3) -> Dual3 {
        Dual3 {
            v: self.v - o.v,
            d: [self.d[0] - o.d[0], self.d[1] - o.d[1], self.d[2] - o.d[2]],
        }
    }
}

impl Mul for Dual3 {
    type Output = Dual3;
    fn mul(self, o: Dual3) -> Dual3 {
        Dual3 {
            v: self.v * o.v,
            d: [
                self.d[0] * o.v + self.v * o.d[0],
                self.d[1] * o.v + self.v * o.d[1],
                self.d[2] * o.v + self.v * o.d[2],
            ],
        }
    }
}

impl ShScalar for Dual3 {
    fn constant(c: f64) -> Self {
        Dual3 { v: c, d: [0.0; 3] }
    }
    fn scale(self, c: f64) -> Self {
        Dual3 {
            v: self.v * c,
            d: [self.d[0] * c, self.d[1] * c, self.d[2] * c],
        }
    }
}

struct NormTable {
    // k[l][m] for m >= 0, already multiplied by √2 when m > 0
    k: Vec<Vec<f64>>,
    // (2m-1)!!
    dfact: Vec<f64>,
}

fn norm_table() -> &'static NormTable {
    static TABLE: OnceLock<NormTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut k = Vec::with_capacity(MAX_L + 1);
        for l in 0..=MAX_L {
            let mut row = Vec::with_capacity(l + 1);
            for m in 0..=l {
                // (l-m)!/(l+m)! as a running product to avoid overflow
                let mut ratio = 1.0;
                for j in (l - m + 1)..=(l + m) {
                    ratio /= j as f64;
                }
                let mut v = ((2 * l + 1) as f64 / (4.0 * PI) * ratio).sqrt();
                if m > 0 {
                    v *= SQRT_2;
                }
                row.push(v);
            }
            k.push(row);
        }
        let mut dfact = vec![1.0; MAX_L + 1];
        for m in 1..=MAX_L {
            dfact[m] = dfact[m - 1] * (2 * m - 1) as f64;
        }
        NormTable { k, dfact }
    })
}

/// Evaluates all basis functions up to `l_max` at `(x, y, z)` into `out`.
///
/// The input is not renormalized; callers pass unit vectors (or differentiate
/// through an explicit normalization).
pub fn eval_sh_generic<T: ShScalar>(x: T, y: T, z: T, l_max: usize, out: &mut [T]) {
    assert!(l_max <= MAX_L, "l_max {l_max} exceeds MAX_L");
    assert!(out.len() >= sh_count(l_max));
    let table = norm_table();
    // cos(mφ) sin^m θ and sin(mφ) sin^m θ as polynomials
    let mut c = T::constant(1.0);
    let mut s = T::constant(0.0);
    for m in 0..=l_max {
        if m > 0 {
            let c_next = x * c - y * s;
            let s_next = x * s + y * c;
            c = c_next;
            s = s_next;
        }
        let pmm = T::constant(table.dfact[m]);
        let mut p_prev2 = pmm;
        let mut p_prev = pmm;
        for l in m..=l_max {
            let p = if l == m {
                pmm
            } else if l == m + 1 {
                (z * pmm).scale((2 * m + 1) as f64)
            } else {
                let a = (z * p_prev).scale((2 * l - 1) as f64);
                let b = p_prev2.scale((l + m - 1) as f64);
                (a - b).scale(1.0 / (l - m) as f64)
            };
            if l > m {
                p_prev2 = p_prev;
            }
            p_prev = p;
            let kn = table.k[l][m];
            if m == 0 {
                out[sh_index(l, 0)] = p.scale(kn);
            } else {
                out[sh_index(l, m as i64)] = (p * c).scale(kn);
                out[sh_index(l, -(m as i64))] = (p * s).scale(kn);
            }
        }
    }
}

/// Real SH values `Y_lm(dir)` for all `(l, m)` up to `l_max`, in flat order.
pub fn eval_sh_basis(dir: &Direction, l_max: usize) -> Result<Vec<f64>> {
    if l_max > MAX_L {
        return Err(Error::invalid(format!("l_max {l_max} exceeds {MAX_L}")));
    }
    let mut out = vec![0.0; sh_count(l_max)];
    eval_sh_generic(dir.x(), dir.y(), dir.z(), l_max, &mut out);
    Ok(out)
}

/// Values and Cartesian gradients of every basis function at `v`.
pub fn eval_sh_with_gradient(v: &[f64; 3], l_max: usize, values: &mut [f64], grads: &mut [[f64; 3]]) {
    let k = sh_count(l_max);
    let mut tmp = vec![Dual3::constant(0.0); k];
    eval_sh_generic(
        Dual3::var(v[0], 0),
        Dual3::var(v[1], 1),
        Dual3::var(v[2], 2),
        l_max,
        &mut tmp,
    );
    for (i, d) in tmp.iter().enumerate() {
        values[i] = d.v;
        grads[i] = d.d;
    }
}

/// Funk-Hecke coefficient of the half-cosine kernel for band `l`.
pub fn lambda_coeff(l: usize) -> f64 {
    if l == 1 {
        return 2.0 * PI / 3.0;
    }
    if l % 2 == 1 {
        return 0.0;
    }
    let half = l / 2;
    let sign = if (half + 1).is_multiple_of(2) { 1.0 } else { -1.0 };
    let mut binom = 1.0;
    for j in 1..=half {
        binom *= (half + j) as f64 / j as f64;
    }
    let lf = l as f64;
    sign * PI / (2.0_f64.powi(l as i32 - 1) * (lf - 1.0) * (lf + 2.0)) * binom
}

/// Attenuation applied to band `l` by a vMF lobe of concentration `kappa`.
pub fn vmf_attenuation(l: usize, kappa: f64) -> f64 {
    (-((l * (l + 1)) as f64) / (2.0 * kappa)).exp()
}

/// SH environment light with one coefficient stack per RGB channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SHLight {
    l_max: usize,
    // channel-major: coeffs[c * K + k]
    coeffs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShLightJson {
    l_max: usize,
    coeffs: Vec<Vec<f64>>,
}

impl Serialize for SHLight {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ShLightJson {
            l_max: self.l_max,
            coeffs: (0..3).map(|c| self.channel(c).to_vec()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SHLight {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = ShLightJson::deserialize(d)?;
        if raw.coeffs.len() != 3 {
            return Err(serde::de::Error::custom("coeffs must have 3 channels"));
        }
        let flat: Vec<f64> = raw.coeffs.into_iter().flatten().collect();
        SHLight::new(raw.l_max, flat).map_err(serde::de::Error::custom)
    }
}

impl SHLight {
    /// `coeffs` is channel-major with length `3 (l_max+1)²`.
    pub fn new(l_max: usize, coeffs: Vec<f64>) -> Result<Self> {
        if l_max > MAX_L {
            return Err(Error::invalid(format!("l_max {l_max} exceeds {MAX_L}")));
        }
        let expected = 3 * sh_count(l_max);
        if coeffs.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: coeffs.len(),
            });
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("non-finite SH coefficient"));
        }
        Ok(SHLight { l_max, coeffs })
    }

    pub fn zeros(l_max: usize) -> Self {
        SHLight {
            l_max,
            coeffs: vec![0.0; 3 * sh_count(l_max)],
        }
    }

    /// Light whose radiance is `rgb` in every direction.
    pub fn constant(l_max: usize, rgb: Rgb) -> Self {
        let mut light = Self::zeros(l_max);
        let y00 = 0.5 / PI.sqrt();
        for (c, v) in rgb.iter().enumerate() {
            light.coeffs[c * sh_count(l_max)] = v / y00;
        }
        light
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn count(&self) -> usize {
        sh_count(self.l_max)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let k = self.count();
        &self.coeffs[c * k..(c + 1) * k]
    }

    pub fn coeff(&self, c: usize, l: usize, m: i64) -> f64 {
        self.channel(c)[sh_index(l, m)]
    }

    pub fn set_coeff(&mut self, c: usize, l: usize, m: i64, v: f64) {
        let k = self.count();
        self.coeffs[c * k + sh_index(l, m)] = v;
    }

    pub fn scaled(&self, s: f64) -> Self {
        SHLight {
            l_max: self.l_max,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    /// Copy restricted (or zero-padded) to band limit `l_max`.
    pub fn truncated(&self, l_max: usize) -> Self {
        let mut out = Self::zeros(l_max);
        let keep = sh_count(l_max.min(self.l_max));
        for c in 0..3 {
            for k in 0..keep {
                out.coeffs[c * sh_count(l_max) + k] = self.channel(c)[k];
            }
        }
        out
    }

    /// Per-channel `Σ w(l) c_lm b_lm` for basis values `b`.
    pub fn weighted_sum(&self, basis: &[f64], weight: impl Fn(usize) -> f64) -> Rgb {
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = self
                .channel(c)
                .iter()
                .zip(basis)
                .enumerate()
                .map(|(k, (a, y))| weight(band_of(k)) * a * y)
                .sum();
        }
        out
    }

    /// Unclamped radiance reconstruction `Σ c_lm Y_lm(dir)`.
    pub fn eval(&self, dir: &Vec3) -> Rgb {
        let mut basis = vec![0.0; self.count()];
        eval_sh_generic(dir.x, dir.y, dir.z, self.l_max, &mut basis);
        self.weighted_sum(&basis, |_| 1.0)
    }

    /// Projects `f` onto the basis with a product Gauss–Legendre × uniform-φ
    /// rule that is exact for band-limited functions up to `l_max`.
    pub fn project<F: Fn(&Vec3) -> Rgb>(f: F, l_max: usize) -> Self {
        let n_theta = 2 * l_max + 4;
        let n_phi = 4 * l_max + 6;
        let (nodes, weights) = gauss_legendre(n_theta);
        let k = sh_count(l_max);
        let mut coeffs = vec![0.0; 3 * k];
        let mut basis = vec![0.0; k];
        for (z, wz) in nodes.iter().zip(&weights) {
            let r = (1.0 - z * z).max(0.0).sqrt();
            for j in 0..n_phi {
                let phi = 2.0 * PI * (j as f64 + 0.5) / n_phi as f64;
                let dir = Vec3::new(r * phi.cos(), r * phi.sin(), *z);
                let w = wz * 2.0 * PI / n_phi as f64;
                let val = f(&dir);
                eval_sh_generic(dir.x, dir.y, dir.z, l_max, &mut basis);
                for c in 0..3 {
                    for (i, y) in basis.iter().enumerate() {
                        coeffs[c * k + i] += w * val[c] * y;
                    }
                }
            }
        }
        SHLight { l_max, coeffs }
    }

    /// Monte-Carlo projection of an equirectangular environment map.
    ///
    /// Pixel `(u, v)` maps to polar angle `θ = π (v + 0.5)/h` measured from +y
    /// and azimuth `φ = 2π (u + 0.5)/w` measured from −z towards +x.
    pub fn from_equirect(env: &crate::io::Image, l_max: usize, samples: usize, seed: u64) -> Result<Self> {
        if env.width() == 0 || env.height() == 0 {
            return Err(Error::invalid("empty environment map"));
        }
        let k = sh_count(l_max);
        let mut coeffs = vec![0.0; 3 * k];
        let mut basis = vec![0.0; k];
        let side = (samples as f64).sqrt().ceil().max(1.0) as usize;
        let n = side * side;
        let mut r = rng::stream(seed, 0);
        for i in 0..n {
            let u1 = crate::math::stratum(i / side, side, rng::uniform(&mut r));
            let u2 = crate::math::stratum(i % side, side, rng::uniform(&mut r));
            let d = uniform_sphere(u1, u2);
            let val = equirect_lookup(env, &d);
            eval_sh_generic(d.x, d.y, d.z, l_max, &mut basis);
            for c in 0..3 {
                for (j, y) in basis.iter().enumerate() {
                    coeffs[c * k + j] += 4.0 * PI / n as f64 * val[c] * y;
                }
            }
        }
        SHLight::new(l_max, coeffs)
    }
}

/// Bilinear lookup of an equirectangular map (see [`SHLight::from_equirect`]).
pub fn equirect_lookup(env: &crate::io::Image, d: &Vec3) -> Rgb {
    let (w, h) = (env.width(), env.height());
    let theta = d.y.clamp(-1.0, 1.0).acos();
    let mut phi = d.x.atan2(-d.z);
    if phi < 0.0 {
        phi += 2.0 * PI;
    }
    let fx = phi / (2.0 * PI) * w as f64 - 0.5;
    let fy = (theta / PI * h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
    let x0 = fx.floor();
    let tx = fx - x0;
    let y0 = fy.floor();
    let ty = fy - y0;
    let xi = |x: f64| (x as i64).rem_euclid(w as i64) as usize;
    let y1 = (y0 as usize + 1).min(h - 1);
    let mut out = [0.0; 3];
    let taps = [
        (xi(x0), y0 as usize, (1.0 - tx) * (1.0 - ty)),
        (xi(x0 + 1.0), y0 as usize, tx * (1.0 - ty)),
        (xi(x0), y1, (1.0 - tx) * ty),
        (xi(x0 + 1.0), y1, tx * ty),
    ];
    for (x, y, wt) in taps {
        let p = env.get(x, y);
        for c in 0..3 {
            out[c] += wt * p[c];
        }
    }
    out
}

/// Clamped diffuse light transport `max(0, Σ Λ_l c_lm Y_lm(n))` per channel.
///
/// Multiply by `albedo / π` to obtain Lambertian outgoing radiance.
pub fn diffuse_irradiance(light: &SHLight, n: &Direction) -> Rgb {
    let mut basis = vec![0.0; light.count()];
    eval_sh_generic(n.x(), n.y(), n.z(), light.l_max, &mut basis);
    light.weighted_sum(&basis, lambda_coeff).map(|v| v.max(0.0))
}

/// vMF lobe around `axis` with concentration `kappa`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VmfLobe {
    axis: Direction,
    kappa: f64,
}

impl VmfLobe {
    pub fn new(axis: Direction, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::invalid(format!("vMF concentration must be positive, got {kappa}")));
        }
        Ok(VmfLobe { axis, kappa })
    }

    pub fn axis(&self) -> Direction {
        self.axis
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

/// vMF density `κ/(4π sinh κ) exp(κ μ·ω)`, evaluated as
/// `κ/(2π(1−e^{−2κ})) exp(κ(μ·ω − 1))` so large κ cannot overflow.
pub fn vmf_pdf(dir: &Direction, lobe: &VmfLobe) -> f64 {
    let k = lobe.kappa;
    let norm = k / (2.0 * PI * -(-2.0 * k).exp_m1());
    norm * (k * (lobe.axis.dot(dir) - 1.0)).exp()
}

/// Prefiltered specular light `max(0, Σ e^{−l(l+1)/(2κ)} c_lm Y_lm(ω_r))`.
pub fn prefiltered_specular_light(light: &SHLight, lobe: &VmfLobe) -> Rgb {
    let a = lobe.axis;
    let mut basis = vec![0.0; light.count()];
    eval_sh_generic(a.x(), a.y(), a.z(), light.l_max, &mut basis);
    light
        .weighted_sum(&basis, |l| vmf_attenuation(l, lobe.kappa))
        .map(|v| v.max(0.0))
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { x } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_band() {
        let d = Direction::new(0.3, -0.2, 0.9).unwrap();
        let y = eval_sh_basis(&d, 3).unwrap();
        assert_relative_eq!(y[0], 0.282_094_791_773_878_14, epsilon = 1e-15);
        assert_eq!(y.len(), 16);
    }

    #[test]
    fn z_axis_band_one() {
        let y = eval_sh_basis(&Direction::Z, 2).unwrap();
        assert_relative_eq!(y[sh_index(1, 0)], (3.0 / (4.0 * PI)).sqrt(), epsilon = 1e-15);
        assert_relative_eq!(y[sh_index(1, 0)], 0.488_602_5, epsilon = 1e-7);
        assert_eq!(y[sh_index(1, 1)], 0.0);
    }

    #[test]
    fn matches_hardcoded_low_bands() {
        // Closed forms for bands 2 and 3 (no Condon–Shortley phase).
        let d = Direction::new(0.4, -0.7, 0.3).unwrap();
        let (x, y, z) = (d.x(), d.y(), d.z());
        let v = eval_sh_basis(&d, 3).unwrap();
        let expect = [
            1.092_548_430_592_079_2 * x * y,
            1.092_548_430_592_079_2 * y * z,
            0.315_391_565_252_520_05 * (3.0 * z * z - 1.0),
            1.092_548_430_592_079_2 * x * z,
            0.546_274_215_296_039_6 * (x * x - y * y),
            0.590_043_589_926_643_5 * y * (3.0 * x * x - y * y),
            2.890_611_442_640_554 * x * y * z,
            0.457_045_799_464_465_8 * y * (5.0 * z * z - 1.0),
            0.373_176_332_590_115_4 * z * (5.0 * z * z - 3.0),
            0.457_045_799_464_465_8 * x * (5.0 * z * z - 1.0),
            1.445_305_721_320_277 * z * (x * x - y * y),
            0.590_043_589_926_643_5 * x * (x * x - 3.0 * y * y),
        ];
        for (i, e) in expect.iter().enumerate() {
            assert_relative_eq!(v[4 + i], *e, epsilon = 1e-13);
        }
    }

    #[test]
    fn lambda_spot_values() {
        assert_eq!(lambda_coeff(1), 2.0 * PI / 3.0);
        assert_eq!(lambda_coeff(3), 0.0);
        assert_eq!(lambda_coeff(7), 0.0);
        assert_relative_eq!(lambda_coeff(0), PI, epsilon = 1e-15);
        assert_relative_eq!(lambda_coeff(2), PI / 4.0, epsilon = 1e-15);
        assert_relative_eq!(lambda_coeff(4), -PI / 24.0, epsilon = 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let v = [0.3, -0.5, 0.81];
        let k = sh_count(6);
        let mut vals = vec![0.0; k];
        let mut grads = vec![[0.0; 3]; k];
        eval_sh_with_gradient(&v, 6, &mut vals, &mut grads);
        let h = 1e-6;
        for axis in 0..3 {
            let mut p = v;
            let mut m = v;
            p[axis] += h;
            m[axis] -= h;
            let mut yp = vec![0.0; k];
            let mut ym = vec![0.0; k];
            eval_sh_generic(p[0], p[1], p[2], 6, &mut yp);
            eval_sh_generic(m[0], m[1], m[2], 6, &mut ym);
            for i in 0..k {
                let fd = (yp[i] - ym[i]) / (2.0 * h);
                assert!((fd - grads[i][axis]).abs() < 1e-6, "k={i} axis={axis}");
            }
        }
    }

    #[test]
    fn quadrature_orthonormality() {
        // Exact projection of each basis function recovers a unit vector.
        let l_max = 5;
        for k in [0, 3, 8, 17, 30] {
            let light = SHLight::project(
                |d| {
                    let mut b = vec![0.0; sh_count(l_max)];
                    eval_sh_generic(d.x, d.y, d.z, l_max, &mut b);
                    [b[k], 0.0, 0.0]
                },
                l_max,
            );
            for (j, c) in light.channel(0).iter().enumerate() {
                let expect = if j == k { 1.0 } else { 0.0 };
                assert!((c - expect).abs() < 1e-12, "k={k} j={j} c={c}");
            }
        }
    }

    #[test]
    fn constant_light_irradiance() {
        let mut light = SHLight::zeros(2);
        for c in 0..3 {
            light.set_coeff(c, 0, 0, 1.0);
        }
        for n in crate::math::fibonacci_sphere(20) {
            let e = diffuse_irradiance(&light, &Direction::from_unit(n).unwrap());
            for v in e {
                assert_relative_eq!(v, PI * 0.5 / PI.sqrt(), epsilon = 1e-14);
                assert_relative_eq!(v, 0.8862, epsilon = 1e-4);
            }
        }
        assert_eq!(diffuse_irradiance(&SHLight::zeros(4), &Direction::Z), [0.0; 3]);
    }

    #[test]
    fn vmf_pdf_limits() {
        let lobe = VmfLobe::new(Direction::Z, 1e-9).unwrap();
        assert_relative_eq!(vmf_pdf(&Direction::X, &lobe), 1.0 / (4.0 * PI), epsilon = 1e-8);
        let big = VmfLobe::new(Direction::Z, 1000.0).unwrap();
        let v = vmf_pdf(&Direction::Z, &big);
        assert!(v.is_finite());
        assert_relative_eq!(v, 1000.0 / (2.0 * PI), max_relative = 1e-12);
        // naive form at moderate κ
        let k = 5.0;
        let lobe = VmfLobe::new(Direction::Z, k).unwrap();
        let d = Direction::new(0.3, 0.1, 0.5).unwrap();
        let naive = k / (4.0 * PI * k.sinh()) * (k * d.z()).exp();
        assert_relative_eq!(vmf_pdf(&d, &lobe), naive, max_relative = 1e-13);
        assert!(VmfLobe::new(Direction::Z, 0.0).is_err());
        assert!(VmfLobe::new(Direction::Z, -1.0).is_err());
    }

    #[test]
    fn prefiltered_large_kappa_is_reconstruction() {
        let light = SHLight::project(|d| [1.0 + d.x, 1.0 + 0.5 * d.y * d.z, 1.2], 3);
        let axis = Direction::new(0.2, 0.4, 0.8).unwrap();
        let lobe = VmfLobe::new(axis, 1e12).unwrap();
        let p = prefiltered_specular_light(&light, &lobe);
        let r = light.eval(&axis.vec());
        for c in 0..3 {
            assert_relative_eq!(p[c], r[c], epsilon = 1e-9);
        }
        let zero = prefiltered_specular_light(&SHLight::zeros(3), &lobe);
        assert_eq!(zero, [0.0; 3]);
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let light = SHLight::project(|d| [d.z.max(0.0), 0.5, 0.2], 2);
        let s = serde_json::to_string(&light).unwrap();
        let back: SHLight = serde_json::from_str(&s).unwrap();
        assert_eq!(back, light);
        assert!(serde_json::from_str::<SHLight>(r#"{"l_max":1,"coeffs":[[1],[1],[1]]}"#).is_err());
        assert!(serde_json::from_str::<SHLight>(r#"{"l_max":-1,"coeffs":[[],[],[]]}"#).is_err());
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(6);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert_relative_eq!(s, 2.0 / 11.0, epsilon = 1e-14);
    }
}
