//! Monte-Carlo ground truth for the closed forms used by the renderer.
//!
//! Estimators draw from counter-based streams keyed by `(seed, chunk)` with
//! fixed chunk sizes, and (when the sample count allows) stratify the two
//! primary dimensions on a square grid. Results are bitwise reproducible for
//! a given seed regardless of the thread count.

pub mod image;
pub mod table;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::exec::{chunk_count, ExecPolicy};
use crate::math::{self, Direction, Vec3};
use crate::rng::{self, StreamRng};
use crate::sh::{self, Rgb, SHLight, VmfLobe};
use crate::{Error, Result};

pub use image::oracle_image;
pub use table::Pchip;

/// Samples per independently seeded shard.
pub const CHUNK: usize = 1 << 14;

/// Default node count of integrated-basis tables.
pub const TABLE_NODES: usize = 128;

/// Analytic BRDFs. All kinds depend on directions only through `ω_i·n`,
/// `ω_o·n` and `ω_i·ω_r`, so they are isotropic and reciprocal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnalyticBrdf {
    /// `albedo/π`.
    Lambertian { albedo: Rgb },
    /// vMF density of `ω_i` around the mirror direction `ω_r`.
    VmfLobe { kappa: f64 },
    /// Normalized Phong lobe `(e+1)/(2π) max(ω_i·ω_r, 0)^e`.
    PhongLobe { exponent: f64 },
    /// `albedo/π + ρ Σ_j c_j b_j`.
    LowRank {
        albedo: Rgb,
        rho: f64,
        coeffs: Vec<f64>,
        bases: Vec<AnalyticBrdf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Lobe {
    Cosine,
    Vmf(f64),
    Phong(f64),
}

/// Sampling strategy for [`mc_render_eq`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    UniformHemisphere,
    Cosine,
    /// One-sample mixture of cosine and lobe sampling, weighted by the
    /// balance heuristic.
    Importance,
}

/// Monte-Carlo result.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate<T = Rgb> {
    pub mean: T,
    pub std_error: T,
    pub n_samples: usize,
    pub seed: u64,
}

fn mirror(wo: &Vec3, n: &Vec3) -> Vec3 {
    2.0 * wo.dot(n) * n - wo
}

fn vmf_density(cos: f64, kappa: f64) -> f64 {
    kappa / (2.0 * PI * -(-2.0 * kappa).exp_m1()) * (kappa * (cos - 1.0)).exp()
}

fn phong_density(cos: f64, e: f64) -> f64 {
    if cos <= 0.0 {
        0.0
    } else {
        (e + 1.0) / (2.0 * PI) * cos.powf(e)
    }
}

impl AnalyticBrdf {
    /// Constant `1/π` basis.
    pub fn lambertian_basis() -> Self {
        AnalyticBrdf::Lambertian { albedo: [1.0; 3] }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AnalyticBrdf::Lambertian { albedo } => {
                if albedo.iter().any(|a| !a.is_finite() || *a < 0.0) {
                    return Err(Error::invalid("albedo must be finite and non-negative"));
                }
            }
            AnalyticBrdf::VmfLobe { kappa } => {
                if !(*kappa > 0.0 && kappa.is_finite()) {
                    return Err(Error::invalid(format!("lobe kappa must be positive, got {kappa}")));
                }
            }
            AnalyticBrdf::PhongLobe { exponent } => {
                if !(*exponent > 0.0 && exponent.is_finite()) {
                    return Err(Error::invalid(format!("Phong exponent must be positive, got {exponent}")));
                }
            }
            AnalyticBrdf::LowRank {
                albedo,
                rho,
                coeffs,
                bases,
            } => {
                if coeffs.len() != bases.len() {
                    return Err(Error::DimensionMismatch {
                        expected: bases.len(),
                        got: coeffs.len(),
                    });
                }
                if !(0.0..=1.0).contains(rho) || coeffs.iter().any(|c| !c.is_finite() || *c < 0.0) {
                    return Err(Error::invalid("low-rank BRDF needs rho in [0,1] and non-negative weights"));
                }
                AnalyticBrdf::Lambertian { albedo: *albedo }.validate()?;
                for b in bases {
                    if matches!(b, AnalyticBrdf::LowRank { .. }) {
                        return Err(Error::invalid("nested low-rank BRDFs are not supported"));
                    }
                    b.validate()?;
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, wi: &Vec3, wo: &Vec3, n: &Vec3) -> Rgb {
        match self {
            AnalyticBrdf::Lambertian { albedo } => albedo.map(|a| a / PI),
            AnalyticBrdf::VmfLobe { kappa } => [vmf_density(wi.dot(&mirror(wo, n)), *kappa); 3],
            AnalyticBrdf::PhongLobe { exponent } => [phong_density(wi.dot(&mirror(wo, n)), *exponent); 3],
            AnalyticBrdf::LowRank {
                albedo,
                rho,
                coeffs,
                bases,
            } => {
                let mut out = albedo.map(|a| a / PI);
                for (c, b) in coeffs.iter().zip(bases) {
                    let v = b.eval(wi, wo, n);
                    for k in 0..3 {
                        out[k] += rho * c * v[k];
                    }
                }
                out
            }
        }
    }

    fn lobes(&self) -> Vec<(f64, Lobe)> {
        match self {
            AnalyticBrdf::Lambertian { .. } => vec![(1.0, Lobe::Cosine)],
            AnalyticBrdf::VmfLobe { kappa } => vec![(1.0, Lobe::Vmf(*kappa))],
            AnalyticBrdf::PhongLobe { exponent } => vec![(1.0, Lobe::Phong(*exponent))],
            AnalyticBrdf::LowRank {
                albedo,
                rho,
                coeffs,
                bases,
            } => {
                let mut out = vec![((albedo.iter().sum::<f64>() / 3.0).max(0.05), Lobe::Cosine)];
                for (c, b) in coeffs.iter().zip(bases) {
                    for (w, l) in b.lobes() {
                        if rho * c * w > 0.0 {
                            out.push((rho * c * w, l));
                        }
                    }
                }
                let total: f64 = out.iter().map(|p| p.0).sum();
                out.iter_mut().for_each(|p| p.0 /= total);
                out
            }
        }
    }

    /// True when all channels are equal, as required of basis functions.
    pub fn is_monochrome(&self) -> bool {
        match self {
            AnalyticBrdf::Lambertian { albedo } => albedo[0] == albedo[1] && albedo[1] == albedo[2],
            AnalyticBrdf::VmfLobe { .. } | AnalyticBrdf::PhongLobe { .. } => true,
            AnalyticBrdf::LowRank { albedo, bases, .. } => {
                albedo[0] == albedo[1] && albedo[1] == albedo[2] && bases.iter().all(|b| b.is_monochrome())
            }
        }
    }
}

fn sample_lobe(lobe: Lobe, u1: f64, u2: f64, n: &Vec3, r: &Vec3) -> Vec3 {
    match lobe {
        Lobe::Cosine => math::local_to_world(&math::cosine_hemisphere(u1, u2), n),
        Lobe::Vmf(k) => math::local_to_world(&math::vmf_local(u1, u2, k), r),
        Lobe::Phong(e) => math::local_to_world(&math::cosine_power_local(u1, u2, e), r),
    }
}

fn lobe_pdf(lobe: Lobe, wi: &Vec3, n: &Vec3, r: &Vec3) -> f64 {
    match lobe {
        Lobe::Cosine => wi.dot(n).max(0.0) / PI,
        Lobe::Vmf(k) => vmf_density(wi.dot(r), k),
        Lobe::Phong(e) => phong_density(wi.dot(r), e),
    }
}

/// Averages `dim` outputs of `f(u1, u2, rng, out)` over `n_samples` draws.
///
/// `(u1, u2)` are stratified over the largest square grid not exceeding
/// `n_samples`; draws beyond the grid are plain uniform. The reported
/// standard error treats samples as independent, which overestimates the
/// error of the stratified part.
pub fn estimate<F>(n_samples: usize, seed: u64, dim: usize, f: F) -> (Vec<f64>, Vec<f64>)
where
    F: Fn(f64, f64, &mut StreamRng, &mut [f64]) + Sync + Send,
{
    let side = (n_samples as f64).sqrt() as usize;
    let side = if (side + 1) * (side + 1) <= n_samples { side + 1 } else { side };
    let grid = side * side;
    let chunks = chunk_count(n_samples, CHUNK);
    let zero = vec![0.0; 2 * dim];
    let sums = ExecPolicy::default().map_reduce(
        chunks,
        zero,
        |c| {
            let mut r = rng::stream(seed, c as u64);
            let mut acc = vec![0.0; 2 * dim];
            let mut out = vec![0.0; dim];
            let end = ((c + 1) * CHUNK).min(n_samples);
            for j in c * CHUNK..end {
                let (a, b) = (rng::uniform(&mut r), rng::uniform(&mut r));
                let (u1, u2) = if j < grid {
                    (math::stratum(j / side, side, a), math::stratum(j % side, side, b))
                } else {
                    (a, b)
                };
                out.iter_mut().for_each(|v| *v = 0.0);
                f(u1, u2, &mut r, &mut out);
                for k in 0..dim {
                    acc[k] += out[k];
                    acc[dim + k] += out[k] * out[k];
                }
            }
            acc
        },
        |mut a, b| {
            a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            a
        },
    );
    let nf = n_samples as f64;
    let mean: Vec<f64> = sums[..dim].iter().map(|s| s / nf).collect();
    let se = (0..dim)
        .map(|k| {
            let var = (sums[dim + k] / nf - mean[k] * mean[k]).max(0.0);
            (var / (nf - 1.0).max(1.0)).sqrt()
        })
        .collect();
    (mean, se)
}

/// Estimate of `∫ L(ω_i) f(ω_i, ω_o) (ω_i·n)⁺ dω_i` with `L` the unclamped SH
/// reconstruction of `light`.
pub fn mc_render_eq(
    brdf: &AnalyticBrdf,
    n: &Direction,
    omega_o: &Direction,
    light: &SHLight,
    n_samples: usize,
    seed: u64,
    sampling: Sampling,
) -> Result<McEstimate> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    brdf.validate()?;
    let (nv, wo) = (n.vec(), omega_o.vec());
    let r = mirror(&wo, &nv);
    let lobes = brdf.lobes();
    let probe = brdf.eval(&nv, &wo, &nv);
    if probe.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("BRDF evaluates to a non-finite value"));
    }
    let (mean, se) = estimate(n_samples, seed, 3, |u1, u2, rng, out| {
        let (wi, pdf) = match sampling {
            Sampling::UniformHemisphere => (math::local_to_world(&math::uniform_hemisphere(u1, u2), &nv), 1.0 / (2.0 * PI)),
            Sampling::Cosine => {
                let wi = math::local_to_world(&math::cosine_hemisphere(u1, u2), &nv);
                (wi, wi.dot(&nv).max(0.0) / PI)
            }
            Sampling::Importance => {
                let mut pick = rng::uniform(rng);
                let mut chosen = lobes[lobes.len() - 1].1;
                for (w, l) in &lobes {
                    if pick < *w {
                        chosen = *l;
                        break;
                    }
                    pick -= w;
                }
                let wi = sample_lobe(chosen, u1, u2, &nv, &r);
                let pdf: f64 = lobes.iter().map(|(w, l)| w * lobe_pdf(*l, &wi, &nv, &r)).sum();
                (wi, pdf)
            }
        };
        let cos = wi.dot(&nv);
        if cos <= 0.0 || pdf <= 0.0 {
            return;
        }
        let f = brdf.eval(&wi, &wo, &nv);
        let l = light.eval(&wi);
        for k in 0..3 {
            out[k] = l[k] * f[k] * cos / pdf;
        }
    });
    Ok(McEstimate {
        mean: [mean[0], mean[1], mean[2]],
        std_error: [se[0], se[1], se[2]],
        n_samples,
        seed,
    })
}

/// Importance-sampled `E_{ω∼vMF}[Y_lm(ω)]`.
pub fn mc_vmf_expectation(l: usize, m: i64, lobe: &VmfLobe, n_samples: usize, seed: u64) -> Result<McEstimate<f64>> {
    if m.unsigned_abs() as usize > l || l > sh::MAX_L {
        return Err(Error::invalid(format!("invalid SH index ({l}, {m})")));
    }
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    let axis = lobe.axis().vec();
    let kappa = lobe.kappa();
    let k = sh::sh_index(l, m);
    let (mean, se) = estimate(n_samples, seed, 1, |u1, u2, _, out| {
        let w = math::local_to_world(&math::vmf_local(u1, u2, kappa), &axis);
        let mut y = vec![0.0; sh::sh_count(l)];
        sh::eval_sh_generic(w.x, w.y, w.z, l, &mut y);
        out[0] = y[k];
    });
    Ok(McEstimate {
        mean: mean[0],
        std_error: se[0],
        n_samples,
        seed,
    })
}

/// `∫ Y_k(ω)(ω·n)⁺ dω` for every basis function up to `l_max`, by
/// cosine-weighted sampling.
pub fn mc_half_cosine_projection(n: &Direction, l_max: usize, n_samples: usize, seed: u64) -> McEstimate<Vec<f64>> {
    let nv = n.vec();
    let count = sh::sh_count(l_max);
    let (mean, se) = estimate(n_samples, seed, count, |u1, u2, _, out| {
        let w = math::local_to_world(&math::cosine_hemisphere(u1, u2), &nv);
        sh::eval_sh_generic(w.x, w.y, w.z, l_max, out);
        out.iter_mut().for_each(|v| *v *= PI);
    });
    McEstimate {
        mean,
        std_error: se,
        n_samples,
        seed,
    }
}

/// Exact band attenuation of a vMF lobe, `I_{l+1/2}(κ)/I_{1/2}(κ)`.
///
/// Uses the continued fraction for consecutive Bessel ratios, evaluated by
/// backward recurrence, which is stable for every `κ > 0`.
pub fn vmf_band_ratio(l: usize, kappa: f64) -> f64 {
    if l == 0 {
        return 1.0;
    }
    let top = l + 60 + (2.0 * kappa) as usize;
    // r_j = I_{j+1/2} / I_{j-1/2} = 1 / ((2j+1)/κ + r_{j+1})
    let mut r = 0.0;
    let mut ratios = vec![0.0; l + 1];
    for j in (1..=top).rev() {
        r = 1.0 / ((2 * j + 1) as f64 / kappa + r);
        if j <= l {
            ratios[j] = r;
        }
    }
    ratios[1..].iter().product()
}

/// Integrated basis table `B(μ) = ∫ b(ω_i, ω_o)(ω_i·n)⁺ dω_i` over
/// `μ = ω_o·n ∈ [0, 1]` on `nodes` uniform nodes.
pub fn integrate_basis_table(b: &AnalyticBrdf, nodes: usize, samples_per_node: usize, seed: u64) -> Result<Pchip> {
    b.validate()?;
    if !b.is_monochrome() {
        return Err(Error::invalid("integrated bases must be monochrome"));
    }
    if nodes < 2 {
        return Err(Error::invalid("a basis table needs at least two nodes"));
    }
    let light = unit_radiance_light();
    let ys = ExecPolicy::default().map(nodes, |i| {
        let mu = i as f64 / (nodes - 1) as f64;
        let wo = Direction::new_unchecked(Vec3::new((1.0 - mu * mu).max(0.0).sqrt(), 0.0, mu));
        mc_render_eq(
            b,
            &Direction::Z,
            &wo,
            &light,
            samples_per_node,
            rng::derive_seed(seed, i as u64),
            Sampling::Importance,
        )
        .expect("validated BRDF")
        .mean[0]
    });
    Ok(Pchip::new(0.0, 1.0, ys))
}

/// Constant light with radiance 1 in every direction.
pub fn unit_radiance_light() -> SHLight {
    SHLight::constant(0, [1.0; 3])
}

/// Funk-Hecke coefficient of the normalized Phong lobe of exponent `e`,
/// `(e+1) ∫_0^1 t^e P_l(t) dt`.
pub fn phong_band_coeff(l: usize, e: f64) -> f64 {
    // I_l = (e − l + 2)/(e + l + 1) I_{l−2}, I_0 = 1/(e+1), I_1 = 1/(e+2)
    let mut i_prev2 = 1.0 / (e + 1.0);
    let mut i_prev = 1.0 / (e + 2.0);
    if l == 0 {
        return (e + 1.0) * i_prev2;
    }
    if l == 1 {
        return (e + 1.0) * i_prev;
    }
    for j in 2..=l {
        let jf = j as f64;
        let cur = (e - jf + 2.0) / (e + jf + 1.0) * i_prev2;
        i_prev2 = i_prev;
        i_prev = cur;
    }
    (e + 1.0) * i_prev
}

/// Phong specular baseline: the light convolved with a normalized Phong lobe
/// around `ω_r`, `max(0, Σ a_l(e) c_lm Y_lm(ω_r))`.
pub fn phong_specular(n: &Direction, omega_o: &Direction, exponent: f64, light: &SHLight) -> Result<Rgb> {
    if !(exponent > 0.0) {
        return Err(Error::invalid(format!("Phong exponent must be positive, got {exponent}")));
    }
    let r = math::reflect(omega_o, n);
    let mut y = vec![0.0; light.count()];
    sh::eval_sh_generic(r.x(), r.y(), r.z(), light.l_max(), &mut y);
    if exponent.is_infinite() {
        return Ok(light.weighted_sum(&y, |_| 1.0).map(|v| v.max(0.0)));
    }
    Ok(light.weighted_sum(&y, |l| phong_band_coeff(l, exponent)).map(|v| v.max(0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn test_light(seed: u64) -> SHLight {
        use rand::Rng;
        let mut r = rng::stream(seed, 0);
        let mut light = SHLight::constant(4, [2.0, 1.8, 1.5]);
        for c in 0..3 {
            for k in 1..light.count() {
                let l = sh::band_of(k);
                let m = k as i64 - (l * l + l) as i64;
                light.set_coeff(c, l, m, r.random_range(-0.25..0.25));
            }
        }
        light
    }

    #[test]
    fn lambertian_constant_light_is_exact_with_cosine_sampling() {
        let brdf = AnalyticBrdf::Lambertian { albedo: [0.5; 3] };
        let light = unit_radiance_light();
        let n = Direction::new(0.3, -0.2, 0.9).unwrap();
        let est = mc_render_eq(&brdf, &n, &n, &light, 1000, 1, Sampling::Cosine).unwrap();
        for c in 0..3 {
            assert_relative_eq!(est.mean[c], 0.5, epsilon = 1e-12);
        }
        let zero = mc_render_eq(&brdf, &n, &n, &SHLight::zeros(2), 100, 1, Sampling::Cosine).unwrap();
        assert_eq!(zero.mean, [0.0; 3]);
    }

    #[test]
    fn seeds_are_bitwise_reproducible() {
        let brdf = AnalyticBrdf::LowRank {
            albedo: [0.6, 0.4, 0.3],
            rho: 0.5,
            coeffs: vec![1.0],
            bases: vec![AnalyticBrdf::VmfLobe { kappa: 30.0 }],
        };
        let n = Direction::Z;
        let wo = Direction::new(0.5, 0.0, 0.8).unwrap();
        let light = test_light(2);
        let a = mc_render_eq(&brdf, &n, &wo, &light, 40_000, 9, Sampling::Importance).unwrap();
        let b = mc_render_eq(&brdf, &n, &wo, &light, 40_000, 9, Sampling::Importance).unwrap();
        assert_eq!(a, b);
        let u = mc_render_eq(&brdf, &n, &wo, &light, 400_000, 3, Sampling::UniformHemisphere).unwrap();
        for c in 0..3 {
            assert!((a.mean[c] - u.mean[c]).abs() < 4.0 * (a.std_error[c] + u.std_error[c]));
        }
    }

    #[test]
    fn brdfs_are_reciprocal() {
        use rand::Rng;
        let mut r = rng::stream(4, 0);
        let kinds = [
            AnalyticBrdf::VmfLobe { kappa: 20.0 },
            AnalyticBrdf::PhongLobe { exponent: 12.0 },
            AnalyticBrdf::Lambertian { albedo: [0.2, 0.3, 0.4] },
        ];
        let n = Vec3::z();
        for _ in 0..100 {
            let a = math::uniform_hemisphere(r.random(), r.random());
            let b = math::uniform_hemisphere(r.random(), r.random());
            for k in &kinds {
                let (f1, f2) = (k.eval(&a, &b, &n), k.eval(&b, &a, &n));
                for c in 0..3 {
                    assert!((f1[c] - f2[c]).abs() <= 1e-12 * f1[c].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn band_ratio_matches_closed_forms() {
        for kappa in [0.5_f64, 4.0, 64.0, 900.0] {
            let a1 = 1.0 / kappa.tanh() - 1.0 / kappa;
            assert_relative_eq!(vmf_band_ratio(1, kappa), a1, max_relative = 1e-12);
            let a2 = 1.0 - 3.0 * a1 / kappa;
            assert_relative_eq!(vmf_band_ratio(2, kappa), a2, max_relative = 1e-10);
        }
    }

    #[test]
    fn vmf_expectation_limits() {
        let axis = Direction::new(0.2, 0.5, -0.7).unwrap();
        let lobe = VmfLobe::new(axis, 5.0).unwrap();
        let e = mc_vmf_expectation(0, 0, &lobe, 1000, 1).unwrap();
        assert_relative_eq!(e.mean, 0.5 / PI.sqrt(), epsilon = 1e-14);
        let sharp = VmfLobe::new(axis, 1e6).unwrap();
        let y = sh::eval_sh_basis(&axis, 3).unwrap();
        let e = mc_vmf_expectation(3, -2, &sharp, 10_000, 2).unwrap();
        assert!((e.mean - y[sh::sh_index(3, -2)]).abs() < 1e-4);
        let z = VmfLobe::new(Direction::Z, 20.0).unwrap();
        let e = mc_vmf_expectation(1, 0, &z, 100_000, 3).unwrap();
        let exact = vmf_band_ratio(1, 20.0) * (3.0 / (4.0 * PI)).sqrt();
        assert!((e.mean - exact).abs() < 1e-5);
        assert!(mc_vmf_expectation(1, 2, &z, 10, 0).is_err());
    }

    #[test]
    fn lambertian_table_is_one() {
        let t = integrate_basis_table(&AnalyticBrdf::lambertian_basis(), 16, 4096, 1).unwrap();
        for y in t.nodes() {
            assert_relative_eq!(*y, 1.0, epsilon = 1e-12);
        }
        assert!(integrate_basis_table(&AnalyticBrdf::Lambertian { albedo: [1.0, 0.5, 0.5] }, 16, 16, 1).is_err());
    }

    #[test]
    fn phong_table_matches_direct_integration_at_normal_incidence() {
        let b = AnalyticBrdf::PhongLobe { exponent: 50.0 };
        let t = integrate_basis_table(&b, TABLE_NODES, 1 << 14, 5).unwrap();
        let light = unit_radiance_light();
        let direct = mc_render_eq(&b, &Direction::Z, &Direction::Z, &light, 10_000_000, 6, Sampling::Cosine).unwrap();
        assert!((t.eval(1.0) - direct.mean[0]).abs() <= 5e-3 * direct.mean[0]);
        let grazing = t.eval(0.01);
        assert!(grazing.is_finite() && grazing >= 0.0);
    }

    #[test]
    fn phong_baseline_limits_and_oracle() {
        let light = test_light(7);
        let n = Direction::new(0.1, 0.2, 0.97).unwrap();
        let wo = Direction::new(-0.3, 0.1, 0.9).unwrap();
        let r = math::reflect(&wo, &n);
        let inf = phong_specular(&n, &wo, f64::INFINITY, &light).unwrap();
        let big = phong_specular(&n, &wo, 1e9, &light).unwrap();
        let recon = light.eval(&r.vec());
        for c in 0..3 {
            assert_relative_eq!(inf[c], recon[c], epsilon = 1e-12);
            assert_relative_eq!(big[c], recon[c], max_relative = 1e-6);
        }
        assert_eq!(phong_specular(&n, &wo, 3.0, &SHLight::zeros(4)).unwrap(), [0.0; 3]);
        // normalized cosine lobe around ω_r over the full sphere
        let rv = r.vec();
        let (mean, _) = estimate(1 << 20, 8, 3, |u1, u2, _, out| {
            let w = math::local_to_world(&math::cosine_power_local(u1, u2, 1.0), &rv);
            let l = light.eval(&w);
            out.copy_from_slice(&l);
        });
        let p = phong_specular(&n, &wo, 1.0, &light).unwrap();
        for c in 0..3 {
            assert!((p[c] - mean[c]).abs() <= 0.02 * mean[c]);
        }
    }
}
