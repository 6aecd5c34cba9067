//! Ground-truth images by per-pixel Monte-Carlo integration at the exact
//! surface.

use crate::exec::ExecPolicy;
use crate::geometry::SdfField;
use crate::io::Image;
use crate::math::{Direction, Vec3};
use crate::render::{sphere_trace_batch, CameraModel};
use crate::rng::derive_seed;
use crate::sh::SHLight;
use crate::Result;

use super::{mc_render_eq, AnalyticBrdf, Sampling};

const NEWTON_STEPS: usize = 8;

/// Oracle render of `field` with the spatially varying BRDF `brdf_at`.
///
/// Each hit is polished by Newton iterations along the ray until the SDF is
/// zero to rounding, then `mc_render_eq` integrates the full rendering
/// equation with `spp` importance samples. Pixel `i` uses seed
/// `derive_seed(seed, i)`.
pub fn oracle_image<F>(
    field: &SdfField,
    params: &[f64],
    camera: &CameraModel,
    brdf_at: F,
    light: &SHLight,
    spp: usize,
    seed: u64,
    policy: ExecPolicy,
) -> Result<Image>
where
    F: Fn(&Vec3) -> AnalyticBrdf + Sync,
{
    camera.validate()?;
    let rows = policy.map(camera.height, |py| -> Result<Vec<[f64; 3]>> {
        let rays: Vec<_> = (0..camera.width).map(|px| camera.ray(px, py)).collect();
        let traces = sphere_trace_batch(field, params, &rays);
        let mut out = vec![[0.0; 3]; camera.width];
        for (px, (ray, tr)) in rays.iter().zip(&traces).enumerate() {
            let Some(mut t) = tr.hit_t() else { continue };
            for _ in 0..NEWTON_STEPS {
                let x = ray.at(t);
                let s = field.eval(params, &x);
                let d = field.gradient(params, &x).dot(&ray.dir.vec());
                if d.abs() < 1e-12 {
                    break;
                }
                t -= s / d;
            }
            let x = ray.at(t);
            let n = field.normal(params, &x)?;
            let wo: Direction = ray.dir.neg();
            if wo.dot(&n) <= 0.0 {
                continue;
            }
            let pixel = (py * camera.width + px) as u64;
            let est = mc_render_eq(&brdf_at(&x), &n, &wo, light, spp, derive_seed(seed, pixel), Sampling::Importance)?;
            out[px] = est.mean;
        }
        Ok(out)
    });
    let mut data = Vec::with_capacity(camera.pixel_count());
    for r in rows {
        data.extend(r?);
    }
    Image::from_pixels(camera.width, camera.height, data)
}
