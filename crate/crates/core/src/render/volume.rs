//! Window sampling, Laplace density and transparency-weighted compositing.

use crate::geometry::{BoundingSphere, SdfField};
use crate::sh::Rgb;
use crate::{Error, Result};

use super::camera::Ray;
use super::trace::TraceResult;

pub const WINDOW_SAMPLES: usize = 32;
pub const WINDOW_HALF_WIDTH: f64 = 0.5;
pub const UNHIT_SAMPLES: usize = 8;

/// `n` uniform parameters on `[t0 − 0.5, t0 + 0.5]`, endpoints included.
pub fn sample_window_n(t0: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let step = 2.0 * WINDOW_HALF_WIDTH / (n - 1) as f64;
    (0..n).map(|i| t0 - WINDOW_HALF_WIDTH + step * i as f64).collect()
}

/// The 32-sample window around a hit.
pub fn sample_window(t0: f64) -> Vec<f64> {
    sample_window_n(t0, WINDOW_SAMPLES)
}

/// Midpoints of `n` equal segments of `[t_in, t_out]`.
pub fn segment_midpoints(t_in: f64, t_out: f64, n: usize) -> Vec<f64> {
    let dt = (t_out - t_in) / n as f64;
    (0..n).map(|i| t_in + (i as f64 + 0.5) * dt).collect()
}

/// Zero-mean unit-scale Laplace CDF.
pub fn laplace_cdf(s: f64) -> f64 {
    if s <= 0.0 {
        0.5 * s.exp()
    } else {
        1.0 - 0.5 * (-s).exp()
    }
}

/// `σ = Ψ_β(−sdf)/β`.
pub fn laplace_density(sdf: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::invalid(format!("density scale β must be positive, got {beta}")));
    }
    Ok(laplace_cdf(-sdf / beta) / beta)
}

/// Compositing weights `w_i = T_i (1 − e^{−σ_i Δt_i})`, with
/// `T_i = exp(−Σ_{j<i} σ_j Δt_j)`.
///
/// Returns `(transparency, weights)`.
pub fn volume_weights(sigma: &[f64], dt: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut acc = 0.0_f64;
    let mut trans = Vec::with_capacity(sigma.len());
    let mut w = Vec::with_capacity(sigma.len());
    for (s, d) in sigma.iter().zip(dt) {
        let tau = s * d;
        let t = (-acc).exp();
        trans.push(t);
        w.push(-t * (-tau).exp_m1());
        acc += tau;
    }
    (trans, w)
}

/// Samples, densities and weights along one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySampleSet {
    pub hit: bool,
    pub t0: Option<f64>,
    pub ts: Vec<f64>,
    pub dt: Vec<f64>,
    pub sigma: Vec<f64>,
    pub transparency: Vec<f64>,
    pub weights: Vec<f64>,
}

impl RaySampleSet {
    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Sample parameters and step lengths for a traced ray: the hit window, or
/// segment midpoints over Ω for unhit rays that cross it.
pub fn ray_samples(bounds: &BoundingSphere, ray: &Ray, trace: &TraceResult, window: usize, unhit: usize) -> (Vec<f64>, Vec<f64>) {
    match trace {
        TraceResult::Hit { t, .. } => {
            let ts = sample_window_n(*t, window);
            let dt = vec![2.0 * WINDOW_HALF_WIDTH / (window - 1) as f64; window];
            (ts, dt)
        }
        TraceResult::Unhit { .. } => match bounds.intersect(&ray.origin, &ray.dir.vec()) {
            Some((t_in, t_out)) if t_out > t_in => {
                let ts = segment_midpoints(t_in, t_out, unhit);
                let dt = vec![(t_out - t_in) / unhit as f64; unhit];
                (ts, dt)
            }
            _ => (Vec::new(), Vec::new()),
        },
    }
}

/// Builds the full sample set for `ray` against `field`.
pub fn sample_ray(field: &SdfField, params: &[f64], ray: &Ray, trace: &TraceResult, beta: f64, window: usize) -> Result<RaySampleSet> {
    let (ts, dt) = ray_samples(&field.bounds, ray, trace, window, UNHIT_SAMPLES);
    let points: Vec<_> = ts.iter().map(|&t| ray.at(t)).collect();
    let sdf = field.eval_batch(params, &points);
    let sigma = sdf.iter().map(|&s| laplace_density(s, beta)).collect::<Result<Vec<_>>>()?;
    let (transparency, weights) = volume_weights(&sigma, &dt);
    Ok(RaySampleSet {
        hit: trace.hit_t().is_some(),
        t0: trace.hit_t(),
        ts,
        dt,
        sigma,
        transparency,
        weights,
    })
}

/// `Σ w_i L_i`.
pub fn volume_integrate(samples: &RaySampleSet, radiances: &[Rgb]) -> Result<Rgb> {
    if radiances.len() != samples.weights.len() {
        return Err(Error::DimensionMismatch {
            expected: samples.weights.len(),
            got: radiances.len(),
        });
    }
    let mut out = [0.0; 3];
    for (w, l) in samples.weights.iter().zip(radiances) {
        for c in 0..3 {
            out[c] += w * l[c];
        }
    }
    Ok(out)
}
