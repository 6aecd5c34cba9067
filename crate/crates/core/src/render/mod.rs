//! Forward rendering: cameras, sphere tracing, volume compositing, shading
//! and the image loop.

pub mod camera;
pub mod model;
pub mod shade;
pub mod trace;
pub mod volume;

pub use camera::{orbit, CameraModel, Ray};
pub use model::{BetaSource, ForwardOptions, ForwardOutput, LightSource, Model, StageTimings, DEFAULT_BETA};
pub use shade::{ShadeContext, ShadeTerms};
pub use trace::{sphere_trace, sphere_trace_batch, TraceResult, UnhitReason, HIT_THRESHOLD, MAX_ITERATIONS};
pub use volume::{
    laplace_density, sample_ray, sample_window, sample_window_n, volume_integrate, volume_weights, RaySampleSet, UNHIT_SAMPLES,
    WINDOW_SAMPLES,
};

use crate::exec::{chunk_count, ExecPolicy};
use crate::io::Image;
use crate::tape::Graph;
use crate::Result;

/// Rays per graph batch when rendering images.
pub const RENDER_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RenderOptions {
    pub forward: ForwardOptions,
    pub policy: ExecPolicy,
}

/// Per-image diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RenderStats {
    pub timings: StageTimings,
    pub hits: usize,
    pub missed_bounds: usize,
    pub negative_entry: usize,
    pub exited_bounds: usize,
    pub back_plane: usize,
    /// Pixels whose trace hit the iteration cap.
    pub capped_pixels: Vec<usize>,
    pub max_iterations: usize,
}

impl RenderStats {
    fn record(&mut self, pixel: usize, tr: &TraceResult) {
        self.max_iterations = self.max_iterations.max(tr.iterations());
        match tr {
            TraceResult::Hit { .. } => self.hits += 1,
            TraceResult::Unhit { reason, .. } => match reason {
                UnhitReason::MissedBounds => self.missed_bounds += 1,
                UnhitReason::NegativeEntry => self.negative_entry += 1,
                UnhitReason::ExitedBounds => self.exited_bounds += 1,
                UnhitReason::BackPlane => self.back_plane += 1,
                UnhitReason::IterationCap => self.capped_pixels.push(pixel),
            },
        }
    }
}

pub struct Rendered {
    pub image: Image,
    pub stats: RenderStats,
}

/// Renders a subset of pixels (flat indices) of `camera`.
pub fn render_pixels(model: &Model, camera: &CameraModel, pixels: &[usize], opts: &RenderOptions) -> Result<(Vec<[f64; 3]>, RenderStats)> {
    camera.validate()?;
    let chunks = chunk_count(pixels.len(), RENDER_CHUNK);
    let results = opts.policy.map(chunks, |c| -> Result<_> {
        let ids = &pixels[c * RENDER_CHUNK..((c + 1) * RENDER_CHUNK).min(pixels.len())];
        let rays: Vec<Ray> = ids.iter().map(|&i| camera.ray_index(i)).collect();
        let mut g = Graph::new(&model.tape);
        let out = model.forward(&mut g, &rays, &opts.forward)?;
        let v = g.value(out.rgb);
        let px: Vec<[f64; 3]> = v.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect();
        Ok((px, out.traces, out.timings))
    });
    let mut colors = Vec::with_capacity(pixels.len());
    let mut stats = RenderStats::default();
    let mut k = 0;
    for r in results {
        let (px, traces, t) = r?;
        for tr in &traces {
            stats.record(pixels[k], tr);
            k += 1;
        }
        colors.extend(px);
        stats.timings += t;
    }
    Ok((colors, stats))
}

/// Renders every pixel of `camera`. Black where nothing is hit.
pub fn render_image(model: &Model, camera: &CameraModel, opts: &RenderOptions) -> Result<Rendered> {
    let pixels: Vec<usize> = (0..camera.pixel_count()).collect();
    let (colors, stats) = render_pixels(model, camera, &pixels, opts)?;
    Ok(Rendered {
        image: Image::from_pixels(camera.width, camera.height, colors)?,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoundingSphere, Displacement, Prior, PriorShape, SdfField};
    use crate::material::{AnalyticField, BasisTables, IntegratedBasis, MaterialField, MaterialSample};
    use crate::math::Vec3;
    use crate::oracle::AnalyticBrdf;
    use crate::sh::SHLight;

    fn sphere_model(light: SHLight, rho: f64) -> Model {
        let sdf = SdfField::new(
            PriorShape::new(Prior::Sphere {
                center: [0.0; 3],
                radius: 100.0,
            }),
            BoundingSphere {
                center: [0.0; 3],
                radius: 150.0,
            },
            Displacement::None,
        );
        let sample = MaterialSample::new([0.6, 0.5, 0.4], rho, 32.0, vec![1.0]).unwrap();
        let basis = IntegratedBasis::Table(BasisTables::build(vec![AnalyticBrdf::VmfLobe { kappa: 32.0 }], 3).unwrap());
        Model::new(sdf, MaterialField::Analytic(AnalyticField::Constant { sample }), basis, light)
    }

    fn camera(res: usize) -> CameraModel {
        CameraModel::look_at(Vec3::new(0.0, 0.0, 400.0), Vec3::zeros(), Vec3::y(), res, res, 40.0).unwrap()
    }

    #[test]
    fn lambertian_sphere_under_constant_light() {
        let mut model = sphere_model(SHLight::constant(2, [1.0, 2.0, 0.5]), 0.0);
        model.beta = BetaSource::Fixed(0.02);
        let cam = camera(32);
        let out = render_image(&model, &cam, &RenderOptions::default()).unwrap();
        let expected = [0.6, 1.0, 0.2];
        let mut inside = 0;
        for py in 0..32 {
            for px in 0..32 {
                let p = out.image.get(px, py);
                let r = cam.ray(px, py);
                let b = r.origin.cross(&r.dir.vec()).norm();
                if b < 90.0 {
                    inside += 1;
                    for c in 0..3 {
                        assert!((p[c] - expected[c]).abs() <= 0.01 * expected[c], "pixel ({px},{py}) {p:?}");
                    }
                } else if b > 150.0 {
                    assert_eq!(p, [0.0; 3]);
                }
            }
        }
        assert!(inside > 100);
        assert_eq!(out.stats.hits + out.stats.missed_bounds + out.stats.exited_bounds, 32 * 32);
        assert!(out.stats.capped_pixels.is_empty());
    }

    #[test]
    fn zero_light_renders_black() {
        let model = sphere_model(SHLight::zeros(4), 0.06);
        let out = render_image(&model, &camera(16), &RenderOptions::default()).unwrap();
        assert!(out.image.pixels().iter().all(|p| *p == [0.0; 3]));
    }

    #[test]
    fn graph_path_matches_point_shading() {
        let mut light = SHLight::constant(2, [0.8, 0.7, 0.9]);
        light.set_coeff(0, 1, 0, 0.3);
        light.set_coeff(1, 2, 1, -0.2);
        let model = sphere_model(light, 0.3);
        let cam = camera(8);
        let opts = ForwardOptions::default();
        let rays: Vec<Ray> = (0..64).map(|i| cam.ray_index(i)).collect();
        let tape = &model.tape;
        let mut g = Graph::new(tape);
        let out = model.forward(&mut g, &rays, &opts).unwrap();
        let rgb = g.value(out.rgb).clone();
        model.with_context(|ctx| {
            for (i, ray) in rays.iter().enumerate() {
                let tr = out.traces[i];
                let set = sample_ray(&model.sdf, model.params(), ray, &tr, model.beta(), opts.window_samples).unwrap();
                let omega_o = ray.dir.neg();
                let rad: Vec<_> = set.ts.iter().map(|&t| ctx.shade(&ray.at(t), &omega_o).unwrap()).collect();
                let want = volume_integrate(&set, &rad).unwrap();
                for c in 0..3 {
                    assert!((rgb[[i, c]] - want[c]).abs() < 1e-10, "ray {i}: {} vs {}", rgb[[i, c]], want[c]);
                }
                assert!((out.weight_sums[i] - set.weight_sum()).abs() < 1e-12);
            }
        });
    }

    #[test]
    fn renders_are_reproducible() {
        let model = sphere_model(SHLight::constant(2, [1.0; 3]), 0.06);
        let cam = camera(24);
        let a = render_image(&model, &cam, &RenderOptions::default()).unwrap();
        let b = render_image(
            &model,
            &cam,
            &RenderOptions {
                policy: ExecPolicy::SEQUENTIAL,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(a.image, b.image);
    }
}
