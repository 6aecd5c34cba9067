//! A complete differentiable scene and its batched graph forward pass.

use std::f64::consts::PI;
use std::ops::AddAssign;
use std::time::{Duration, Instant};

use ndarray::Array2;

use crate::geometry::SdfField;
use crate::material::{IntegratedBasis, MaterialField};
use crate::math::Vec3;
use crate::sh::{band_of, lambda_coeff, sh_count, SHLight};
use crate::tape::{Graph, ParamHandle, ParamTape, Var};
use crate::Result;

use super::camera::Ray;
use super::shade::ShadeContext;
use super::trace::{sphere_trace_batch, TraceResult};
use super::volume::{ray_samples, UNHIT_SAMPLES, WINDOW_SAMPLES};

/// Initial density scale in millimeters.
pub const DEFAULT_BETA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum LightSource {
    Fixed(SHLight),
    /// `[3 × (l_max+1)²]` channel-major block on the tape.
    Learnable { l_max: usize, handle: ParamHandle },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaSource {
    Fixed(f64),
    /// Stores `ln β`.
    Learnable(ParamHandle),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub tape: ParamTape,
    pub sdf: SdfField,
    pub material: MaterialField,
    pub basis: IntegratedBasis,
    pub light: LightSource,
    pub beta: BetaSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    pub window_samples: usize,
    pub unhit_samples: usize,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions {
            window_samples: WINDOW_SAMPLES,
            unhit_samples: UNHIT_SAMPLES,
        }
    }
}

/// Wall time per pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub trace: Duration,
    pub shade: Duration,
    pub integrate: Duration,
}

impl AddAssign for StageTimings {
    fn add_assign(&mut self, o: Self) {
        self.trace += o.trace;
        self.shade += o.shade;
        self.integrate += o.integrate;
    }
}

pub struct ForwardOutput {
    /// `[R × 3]` composited radiance.
    pub rgb: Var,
    /// `[R × 3]` composited specular radiance alone.
    pub specular: Var,
    pub traces: Vec<TraceResult>,
    pub weight_sums: Vec<f64>,
    pub timings: StageTimings,
}

struct BlockOutput {
    rgb: Var,
    specular: Var,
    weight_sums: Vec<f64>,
}

impl Model {
    pub fn new(sdf: SdfField, material: MaterialField, basis: IntegratedBasis, light: SHLight) -> Self {
        Model {
            tape: ParamTape::new(),
            sdf,
            material,
            basis,
            light: LightSource::Fixed(light),
            beta: BetaSource::Fixed(DEFAULT_BETA),
        }
    }

    pub fn params(&self) -> &[f64] {
        self.tape.values()
    }

    /// Current light as a value.
    pub fn light(&self) -> SHLight {
        match &self.light {
            LightSource::Fixed(l) => l.clone(),
            LightSource::Learnable { l_max, handle } => {
                SHLight::new(*l_max, self.tape.slice(*handle).to_vec()).expect("light block has the registered size")
            }
        }
    }

    pub fn beta(&self) -> f64 {
        match self.beta {
            BetaSource::Fixed(b) => b,
            BetaSource::Learnable(h) => self.tape.slice(h)[0].exp(),
        }
    }

    /// Swaps in a fixed light, leaving geometry and material untouched.
    pub fn set_light(&mut self, light: SHLight) {
        self.light = LightSource::Fixed(light);
    }

    /// Registers the light coefficients as parameters, initialized to `init`.
    pub fn make_light_learnable(&mut self, init: &SHLight) {
        let k = sh_count(init.l_max());
        let handle = self.tape.register("light", "light", 3, k, init.coeffs().to_vec());
        self.light = LightSource::Learnable { l_max: init.l_max(), handle };
    }

    /// Registers `ln β` as a parameter.
    pub fn make_beta_learnable(&mut self, init: f64) {
        let h = self.tape.register("beta", "beta", 1, 1, vec![init.ln()]);
        self.beta = BetaSource::Learnable(h);
    }

    /// Runs `f` with a shading context over the current parameters.
    pub fn with_context<T>(&self, f: impl FnOnce(&ShadeContext) -> T) -> T {
        let light = self.light();
        let ctx = ShadeContext {
            params: self.tape.values(),
            field: &self.sdf,
            material: &self.material,
            basis: &self.basis,
            light: &light,
        };
        f(&ctx)
    }

    pub fn trace(&self, rays: &[Ray]) -> Vec<TraceResult> {
        sphere_trace_batch(&self.sdf, self.tape.values(), rays)
    }

    /// `[K × 3]` light coefficients and the band limit.
    pub fn light_var(&self, g: &mut Graph) -> (Var, usize) {
        match &self.light {
            LightSource::Fixed(l) => {
                let k = l.count();
                let m = Array2::from_shape_fn((k, 3), |(i, c)| l.channel(c)[i]);
                (g.constant(m), l.l_max())
            }
            LightSource::Learnable { l_max, handle } => {
                let p = g.param(*handle);
                (g.transpose(p), *l_max)
            }
        }
    }

    /// `1/β` as a `[1 × 1]` node.
    fn inv_beta_var(&self, g: &mut Graph) -> Var {
        match self.beta {
            BetaSource::Fixed(b) => g.constant_scalar(1.0 / b),
            BetaSource::Learnable(h) => {
                let raw = g.param(h);
                let n = g.neg(raw);
                g.exp(n)
            }
        }
    }

    /// Traces, samples, shades and composites `rays` on `g`.
    ///
    /// Hit rays get a window around the surface, unhit rays that cross Ω
    /// get sparse samples, and rays that miss Ω are black.
    pub fn forward(&self, g: &mut Graph, rays: &[Ray], opts: &ForwardOptions) -> Result<ForwardOutput> {
        let t = Instant::now();
        let traces = self.trace(rays);
        let elapsed = t.elapsed();
        let mut out = self.forward_traced(g, rays, traces, opts)?;
        out.timings.trace += elapsed;
        Ok(out)
    }

    /// [`Model::forward`] with the sphere-trace results supplied. The trace
    /// is not differentiated, so holding it fixed gives the exact function
    /// whose gradient the graph computes.
    pub fn forward_traced(&self, g: &mut Graph, rays: &[Ray], traces: Vec<TraceResult>, opts: &ForwardOptions) -> Result<ForwardOutput> {
        let mut timings = StageTimings::default();

        let mut hit = Vec::new();
        let mut unhit = Vec::new();
        let mut row = vec![usize::MAX; rays.len()];
        for (i, tr) in traces.iter().enumerate() {
            let (ts, dt) = ray_samples(&self.sdf.bounds, &rays[i], tr, opts.window_samples, opts.unhit_samples);
            if ts.is_empty() {
                continue;
            }
            if tr.hit_t().is_some() {
                row[i] = hit.len();
                hit.push((i, ts, dt));
            } else {
                row[i] = unhit.len();
                unhit.push((i, ts, dt));
            }
        }
        let n_hit = hit.len();

        let mut rgb_parts = Vec::new();
        let mut spec_parts = Vec::new();
        let mut weight_sums = vec![0.0; rays.len()];
        for (block, samples) in [(hit, opts.window_samples), (unhit, opts.unhit_samples)] {
            if block.is_empty() {
                continue;
            }
            let out = self.shade_block(g, rays, &block, samples, &mut timings)?;
            for ((i, _, _), w) in block.iter().zip(&out.weight_sums) {
                weight_sums[*i] = *w;
            }
            rgb_parts.push(out.rgb);
            spec_parts.push(out.specular);
        }
        let zero = g.constant(Array2::zeros((1, 3)));
        rgb_parts.push(zero);
        spec_parts.push(zero);

        let t = Instant::now();
        let all_rgb = g.concat_rows(&rgb_parts);
        let all_spec = g.concat_rows(&spec_parts);
        let zero_row = g.shape(all_rgb).0 - 1;
        let idx: Vec<usize> = traces
            .iter()
            .enumerate()
            .map(|(i, tr)| match row[i] {
                usize::MAX => zero_row,
                r if tr.hit_t().is_some() => r,
                r => n_hit + r,
            })
            .collect();
        let rgb = g.gather_rows(all_rgb, idx.clone());
        let specular = g.gather_rows(all_spec, idx);
        timings.integrate += t.elapsed();

        Ok(ForwardOutput {
            rgb,
            specular,
            traces,
            weight_sums,
            timings,
        })
    }

    fn shade_block(
        &self,
        g: &mut Graph,
        rays: &[Ray],
        block: &[(usize, Vec<f64>, Vec<f64>)],
        per_ray: usize,
        timings: &mut StageTimings,
    ) -> Result<BlockOutput> {
        let t_shade = Instant::now();
        let n = block.len() * per_ray;
        let mut points = Vec::with_capacity(n);
        let mut wo = Array2::zeros((n, 3));
        let mut dt = Array2::zeros((n, 1));
        for (b, (i, ts, dts)) in block.iter().enumerate() {
            let ray = &rays[*i];
            for (s, (t, d)) in ts.iter().zip(dts).enumerate() {
                let r = b * per_ray + s;
                points.push(ray.at(*t));
                for c in 0..3 {
                    wo[[r, c]] = -ray.dir.vec()[c];
                }
                dt[[r, 0]] = *d;
            }
        }

        let sdf = self.sdf.eval_graph(g, &points);
        let gn = g.norm_rows(sdf.gradient, 1e-12);
        let normal = g.div(sdf.gradient, gn);
        let wo = g.constant(wo);
        let mu = g.dot_rows(normal, wo);
        let front = g.value(mu).mapv(|m| if m > 0.0 { 1.0 } else { 0.0 });
        let front = g.constant(front);
        let mat = self.material.eval_graph(g, &self.sdf.bounds, &points)?;
        let (light, l_max) = self.light_var(g);
        let k = sh_count(l_max);

        // diffuse: (a/π) relu(Σ Λ_l c_lm Y_lm(n))
        let lambda = g.constant(Array2::from_shape_fn((1, k), |(_, j)| lambda_coeff(band_of(j))));
        let y_n = g.sh_basis(normal, l_max);
        let y_n = g.mul(y_n, lambda);
        let irr = g.matmul(y_n, light);
        let irr = g.relu(irr);
        let albedo = g.scale(mat.albedo, 1.0 / PI);
        let diffuse = g.mul(albedo, irr);

        // specular: ρ relu(c·B) relu(Σ e^{−l(l+1)/(2κ)} c_lm Y_lm(ω_r))
        let two_mu_n = g.mul(normal, mu);
        let two_mu_n = g.scale(two_mu_n, 2.0);
        let refl = g.sub(two_mu_n, wo);
        let half_ll1 = g.constant(Array2::from_shape_fn((1, k), |(_, j)| {
            let l = band_of(j) as f64;
            -0.5 * l * (l + 1.0)
        }));
        let att = g.mul(mat.inv_kappa, half_ll1);
        let att = g.exp(att);
        let y_r = g.sh_basis(refl, l_max);
        let y_r = g.mul(y_r, att);
        let pre = g.matmul(y_r, light);
        let pre = g.relu(pre);
        let basis = self.basis.eval_graph(g, wo, normal, mu);
        let cb = g.dot_rows(mat.coeffs, basis);
        let cb = g.relu(cb);
        let mag = g.mul(mat.rho, cb);
        let mag = g.mul(mag, front);
        let specular = g.mul(pre, mag);
        let radiance = g.add(diffuse, specular);
        timings.shade += t_shade.elapsed();

        let t_int = Instant::now();
        let inv_beta = self.inv_beta_var(g);
        let neg = g.neg(sdf.value);
        let z = g.mul(neg, inv_beta);
        let cdf = g.laplace_cdf(z);
        let sigma = g.mul(cdf, inv_beta);
        let dt = g.constant(dt);
        let tau = g.mul(sigma, dt);
        let tau = g.reshape(tau, block.len(), per_ray);
        let acc = g.cumsum_exclusive_cols(tau);
        let acc = g.neg(acc);
        let trans = g.exp(acc);
        let nt = g.neg(tau);
        let e = g.exp(nt);
        let alpha = g.scale(e, -1.0);
        let alpha = g.add_scalar(alpha, 1.0);
        let w = g.mul(trans, alpha);
        let weight_sums = g.value(w).rows().into_iter().map(|r| r.sum()).collect();
        let w = g.reshape(w, n, 1);
        let lw = g.mul(radiance, w);
        let rgb = g.group_sum_rows(lw, per_ray);
        let sw = g.mul(specular, w);
        let specular = g.group_sum_rows(sw, per_ray);
        timings.integrate += t_int.elapsed();

        Ok(BlockOutput {
            rgb,
            specular,
            weight_sums,
        })
    }

    /// Positions where the forward pass would shade, for diagnostics.
    pub fn sample_points(&self, ray: &Ray, trace: &TraceResult, opts: &ForwardOptions) -> Vec<Vec3> {
        let (ts, _) = ray_samples(&self.sdf.bounds, ray, trace, opts.window_samples, opts.unhit_samples);
        ts.iter().map(|&t| ray.at(t)).collect()
    }
}
