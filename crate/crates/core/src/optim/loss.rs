//! The compound training loss.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::math::fibonacci_sphere;
use crate::tape::{Graph, Var};

/// Sphere quadrature size for the white-light term.
pub const WHITE_DIRECTIONS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub rgb: f64,
    pub white: f64,
    pub spec: f64,
    pub eikonal: f64,
    pub residual: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            rgb: 1.0,
            white: 5e-3,
            spec: 8e-3,
            eikonal: 0.1,
            residual: 1e-3,
        }
    }
}

/// Unweighted terms and their weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rgb: f64,
    pub white: f64,
    pub spec: f64,
    pub eikonal: f64,
    pub residual: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.rgb * self.rgb + w.white * self.white + w.spec * self.spec + w.eikonal * self.eikonal + w.residual * self.residual
    }

    /// Adds `other` with every field scaled by `s`.
    pub fn accumulate(&mut self, other: &LossBreakdown, s: f64) {
        self.rgb += s * other.rgb;
        self.white += s * other.white;
        self.spec += s * other.spec;
        self.eikonal += s * other.eikonal;
        self.residual += s * other.residual;
        self.total += s * other.total;
    }
}

/// Graph nodes feeding the loss. Absent terms contribute zero.
#[derive(Default)]
pub struct LossInputs {
    /// `[R × 3]` calibrated renders and the matching observations.
    pub rendered: Option<(Var, Array2<f64>)>,
    /// `[K × 3]` light coefficients and their band limit.
    pub light: Option<(Var, usize)>,
    /// `[R × 3]` specular radiance.
    pub specular: Option<Var>,
    /// `[N × 3]` SDF gradients at Ω samples.
    pub sdf_gradient: Option<Var>,
    /// `[N × 1]` displacement at Ω samples.
    pub displacement: Option<Var>,
}

pub struct LossOutput {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

/// Mean absolute error.
pub fn rgb_loss(g: &mut Graph, rendered: Var, observed: Array2<f64>) -> Var {
    let o = g.constant(observed);
    let d = g.sub(rendered, o);
    let a = g.abs(d);
    g.mean(a)
}

/// Mean absolute deviation of the light from its channel mean over a fixed
/// Fibonacci quadrature of the sphere.
pub fn white_loss(g: &mut Graph, light: Var, l_max: usize) -> Var {
    let dirs = fibonacci_sphere(WHITE_DIRECTIONS);
    let d = g.constant(Array2::from_shape_fn((dirs.len(), 3), |(i, j)| dirs[i][j]));
    let y = g.sh_basis(d, l_max);
    let radiance = g.matmul(y, light);
    let s = g.sum_cols(radiance);
    let m = g.scale(s, 1.0 / 3.0);
    let dev = g.sub(radiance, m);
    let a = g.abs(dev);
    g.mean(a)
}

/// Mean specular radiance (non-negative by construction).
pub fn spec_loss(g: &mut Graph, specular: Var) -> Var {
    g.mean(specular)
}

/// Mean `|‖∇SDF‖ − 1|`.
pub fn eikonal_loss(g: &mut Graph, gradient: Var) -> Var {
    let n = g.norm_rows(gradient, 1e-12);
    let d = g.add_scalar(n, -1.0);
    let a = g.abs(d);
    g.mean(a)
}

/// Mean `|D(x)|`.
pub fn residual_loss(g: &mut Graph, displacement: Var) -> Var {
    let a = g.abs(displacement);
    g.mean(a)
}

/// Records every present term and the weighted sum.
pub fn loss_total(g: &mut Graph, inputs: LossInputs, w: &LossWeights) -> LossOutput {
    let mut breakdown = LossBreakdown::default();
    let mut parts: Vec<(Var, f64)> = Vec::new();
    if let Some((r, o)) = inputs.rendered {
        let v = rgb_loss(g, r, o);
        breakdown.rgb = g.scalar(v);
        parts.push((v, w.rgb));
    }
    if let Some((l, lm)) = inputs.light {
        let v = white_loss(g, l, lm);
        breakdown.white = g.scalar(v);
        parts.push((v, w.white));
    }
    if let Some(s) = inputs.specular {
        let v = spec_loss(g, s);
        breakdown.spec = g.scalar(v);
        parts.push((v, w.spec));
    }
    if let Some(gr) = inputs.sdf_gradient {
        let v = eikonal_loss(g, gr);
        breakdown.eikonal = g.scalar(v);
        parts.push((v, w.eikonal));
    }
    if let Some(d) = inputs.displacement {
        let v = residual_loss(g, d);
        breakdown.residual = g.scalar(v);
        parts.push((v, w.residual));
    }
    let mut total = g.constant_scalar(0.0);
    for (v, wt) in parts {
        let s = g.scale(v, wt);
        total = g.add(total, s);
    }
    breakdown.total = g.scalar(total);
    LossOutput { total, breakdown }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sh::{sh_count, SHLight};
    use crate::tape::ParamTape;
    use ndarray::array;

    #[test]
    fn matching_renders_and_gray_light_cost_nothing() {
        let tape = ParamTape::new();
        let mut g = Graph::new(&tape);
        let obs = array![[0.1, 0.2, 0.3], [0.5, 0.5, 0.5]];
        let r = g.constant(obs.clone());
        let l = SHLight::constant(2, [0.7; 3]);
        let lm = g.constant(Array2::from_shape_fn((sh_count(2), 3), |(k, c)| l.channel(c)[k]));
        let out = loss_total(
            &mut g,
            LossInputs {
                rendered: Some((r, obs)),
                light: Some((lm, 2)),
                ..Default::default()
            },
            &LossWeights::default(),
        );
        assert_eq!(out.breakdown.rgb, 0.0);
        assert!(out.breakdown.white.abs() < 1e-15);
        assert_eq!(g.scalar(out.total), out.breakdown.total);
    }

    #[test]
    fn total_is_the_weighted_sum() {
        let tape = ParamTape::new();
        let mut g = Graph::new(&tape);
        let r = g.constant(array![[0.0, 0.0, 1.0]]);
        let spec = g.constant(array![[0.1, 0.2, 0.3]]);
        let grad = g.constant(array![[2.0, 0.0, 0.0], [0.0, 0.5, 0.0]]);
        let disp = g.constant(array![[-1.0], [3.0]]);
        let w = LossWeights::default();
        let out = loss_total(
            &mut g,
            LossInputs {
                rendered: Some((r, array![[0.0, 0.0, 0.0]])),
                specular: Some(spec),
                sdf_gradient: Some(grad),
                displacement: Some(disp),
                ..Default::default()
            },
            &w,
        );
        let b = out.breakdown;
        assert!((b.rgb - 1.0 / 3.0).abs() < 1e-15);
        assert!((b.spec - 0.2).abs() < 1e-15);
        assert!((b.eikonal - 0.75).abs() < 1e-11);
        assert!((b.residual - 2.0).abs() < 1e-15);
        assert!((b.total - b.weighted_total(&w)).abs() < 1e-14);
    }
}
