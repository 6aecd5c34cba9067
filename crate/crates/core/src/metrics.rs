//! Image-quality and geometry metrics.

use serde::{Deserialize, Serialize};

use crate::exec::chunk_count;
use crate::geometry::SdfField;
use crate::io::Image;
use crate::math::{fibonacci_sphere, Direction, Vec3};
use crate::render::{sphere_trace_batch, CameraModel, Model, Ray, RenderOptions, RENDER_CHUNK};
use crate::tape::Graph;
use crate::{Error, Result};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Number of probe directions for the geometry error.
pub const PROBE_DIRECTIONS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub psnr: f64,
    pub ssim: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub geom_err: Option<f64>,
}

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::invalid(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    let n = 3 * a.pixels().len();
    let s: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>())
        .sum();
    Ok(s / n as f64)
}

/// `−10 log10(MSE)` on linear values with peak 1, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * m.log10()).min(PSNR_CAP))
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let w: Vec<f64> = (0..size).map(|i| (-(i as f64 - r).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable filter over valid window positions.
fn filter(ch: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * ch[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM with an 11×11 Gaussian window (σ = 1.5), `K1 = 0.01`,
/// `K2 = 0.03`, peak 1, averaged over valid windows and the three channels.
/// Images smaller than the window use the largest odd window that fits.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    let (w, h) = (a.width(), a.height());
    let mut size = SSIM_WINDOW.min(w).min(h);
    if size % 2 == 0 {
        size -= 1;
    }
    let k = gaussian_window(size, SSIM_SIGMA);
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = a.pixels().iter().map(|p| p[c]).collect();
        let y: Vec<f64> = b.pixels().iter().map(|p| p[c]).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, ow, oh) = filter(&x, w, h, &k);
        let my = filter(&y, w, h, &k).0;
        let sxx = filter(&xx, w, h, &k).0;
        let syy = filter(&yy, w, h, &k).0;
        let sxy = filter(&xy, w, h, &k).0;
        let mut s = 0.0;
        for i in 0..ow * oh {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            s += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2)) / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += s / (ow * oh) as f64;
    }
    Ok(total / 3.0)
}

pub fn compute_metrics(a: &Image, b: &Image) -> Result<MetricsReport> {
    Ok(MetricsReport {
        psnr: psnr(a, b)?,
        ssim: ssim(a, b)?,
        geom_err: None,
    })
}

/// SDF-probe geometry error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryProbe {
    /// Mean `|SDF_truth|` at the recovered surface hits, in millimeters.
    pub mean_abs_sdf: f64,
    pub max_abs_sdf: f64,
    pub hits: usize,
    pub probes: usize,
}

/// Traces the recovered surface from `n_dirs` Fibonacci directions outside
/// Ω toward its center and evaluates the ground-truth SDF at each hit.
pub fn geometry_probe(recovered: &SdfField, params: &[f64], truth: &SdfField, truth_params: &[f64], n_dirs: usize) -> GeometryProbe {
    let c = recovered.bounds.center();
    let r = recovered.bounds.radius;
    let rays: Vec<Ray> = fibonacci_sphere(n_dirs)
        .into_iter()
        .map(|d| Ray {
            origin: c + d * (1.5 * r),
            dir: Direction::normalize(-d).expect("unit probe direction"),
        })
        .collect();
    let traces = sphere_trace_batch(recovered, params, &rays);
    let points: Vec<_> = rays
        .iter()
        .zip(&traces)
        .filter_map(|(ray, tr)| tr.hit_t().map(|t| ray.at(t)))
        .collect();
    let vals = truth.eval_batch(truth_params, &points);
    let abs: Vec<f64> = vals.iter().map(|v| v.abs()).collect();
    GeometryProbe {
        mean_abs_sdf: if abs.is_empty() { f64::INFINITY } else { abs.iter().sum::<f64>() / abs.len() as f64 },
        max_abs_sdf: abs.iter().cloned().fold(0.0, f64::max),
        hits: abs.len(),
        probes: n_dirs,
    }
}

/// Albedo error between recovered and true albedo at matched points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlbedoError {
    /// Mean absolute error after scaling each recovered channel by `scale`.
    pub aligned: f64,
    pub raw: f64,
    /// Per-channel least-squares scale from recovered to true.
    pub scale: [f64; 3],
}

/// Albedo and light intensity trade off per channel, so the headline number
/// is taken after a least-squares scale on each channel.
pub fn albedo_error(recovered: &[[f64; 3]], truth: &[[f64; 3]]) -> Result<AlbedoError> {
    if recovered.len() != truth.len() || recovered.is_empty() {
        return Err(Error::invalid("albedo sets must be non-empty and of equal length"));
    }
    let n = recovered.len() as f64;
    let mut scale = [1.0; 3];
    let (mut aligned, mut raw) = (0.0, 0.0);
    for c in 0..3 {
        let num: f64 = recovered.iter().zip(truth).map(|(e, t)| e[c] * t[c]).sum();
        let den: f64 = recovered.iter().map(|e| e[c] * e[c]).sum();
        if den > 0.0 {
            scale[c] = num / den;
        }
        aligned += recovered.iter().zip(truth).map(|(e, t)| (scale[c] * e[c] - t[c]).abs()).sum::<f64>() / n;
        raw += recovered.iter().zip(truth).map(|(e, t)| (e[c] - t[c]).abs()).sum::<f64>() / n;
    }
    Ok(AlbedoError {
        aligned: aligned / 3.0,
        raw: raw / 3.0,
        scale,
    })
}

/// Points on the sphere of `radius` around `center` used to compare albedo.
pub fn albedo_probe_points(center: Vec3, radius: f64, n: usize) -> Vec<Vec3> {
    fibonacci_sphere(n).into_iter().map(|d| center + d * radius).collect()
}

/// Mean specular radiance magnitude over the pixels of `cameras` that hit
/// the surface.
pub fn specular_energy(model: &Model, cameras: &[CameraModel], opts: &RenderOptions) -> Result<f64> {
    let mut sum = 0.0;
    let mut hits = 0usize;
    for cam in cameras {
        let n = cam.pixel_count();
        let parts = opts.policy.map(chunk_count(n, RENDER_CHUNK), |c| -> Result<(f64, usize)> {
            let rays: Vec<Ray> = (c * RENDER_CHUNK..((c + 1) * RENDER_CHUNK).min(n)).map(|i| cam.ray_index(i)).collect();
            let mut g = Graph::new(&model.tape);
            let out = model.forward(&mut g, &rays, &opts.forward)?;
            let v = g.value(out.specular);
            let mut s = 0.0;
            let mut k = 0;
            for (row, tr) in v.rows().into_iter().zip(&out.traces) {
                if tr.hit_t().is_some() {
                    s += (row[0] + row[1] + row[2]) / 3.0;
                    k += 1;
                }
            }
            Ok((s, k))
        });
        for p in parts {
            let (s, k) = p?;
            sum += s;
            hits += k;
        }
    }
    if hits == 0 {
        return Err(Error::invalid("no camera ray hits the surface"));
    }
    Ok(sum / hits as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn noise(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = crate::rng::stream(seed, 0);
        let px = (0..w * h).map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()]).collect();
        Image::from_pixels(w, h, px).unwrap()
    }

    #[test]
    fn identical_images_hit_the_caps() {
        let a = noise(20, 16, 1);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_offset_gives_twenty_db() {
        let a = noise(16, 16, 2).map(|p| p.map(|v| 0.8 * v));
        let b = a.map(|p| p.map(|v| v + 0.1));
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn negative_image_has_nonpositive_ssim() {
        let a = noise(32, 32, 3);
        let b = a.map(|p| p.map(|v| 1.0 - v));
        assert!(ssim(&a, &b).unwrap() <= 0.0);
        let c = noise(8, 8, 4);
        assert!(psnr(&a, &c).is_err());
    }

    #[test]
    fn albedo_error_ignores_channel_scale() {
        let t: Vec<[f64; 3]> = (0..50).map(|i| [0.2 + 0.01 * i as f64, 0.5, 0.7 - 0.005 * i as f64]).collect();
        let e: Vec<[f64; 3]> = t.iter().map(|v| [0.5 * v[0], 2.0 * v[1], v[2]]).collect();
        let r = albedo_error(&e, &t).unwrap();
        assert!(r.aligned < 1e-12);
        assert!(r.raw > 0.1);
        assert!((r.scale[0] - 2.0).abs() < 1e-12);
    }
}
