//! Spatially varying appearance and the integrated BRDF basis.
//!
//! A material field maps a position to albedo `a`, specular intensity `ρ`,
//! shininess `κ` and `k` low-rank weights `c`. The specular term of a point
//! is `ρ · max(c·B(ω_o, n), 0) · prefiltered light`, where `B_j` integrates
//! basis BRDF `b_j` against the half-cosine.

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::geometry::BoundingSphere;
use crate::math::{Direction, Vec3};
use crate::nn::{Activation, Init, Mlp, MlpSpec};
use crate::oracle::{self, AnalyticBrdf, Pchip};
use crate::rng::StreamRng;
use crate::sh::Rgb;
use crate::tape::{Curve, Graph, ParamTape, Var};
use crate::{Error, Result};

/// Basis count used when none is configured.
pub const DEFAULT_BASIS_COUNT: usize = 3;

/// Positions farther than this fraction outside Ω are rejected.
pub const DOMAIN_SLACK: f64 = 0.1;

/// Appearance parameters at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSample {
    pub albedo: Rgb,
    pub rho: f64,
    pub kappa: f64,
    pub coeffs: Vec<f64>,
}

impl MaterialSample {
    pub fn new(albedo: Rgb, rho: f64, kappa: f64, coeffs: Vec<f64>) -> Result<Self> {
        let m = MaterialSample {
            albedo,
            rho,
            kappa,
            coeffs,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !self.albedo.iter().all(|a| unit(*a)) || !unit(self.rho) {
            return Err(Error::invalid("albedo and rho must lie in [0, 1]"));
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(Error::invalid(format!("kappa must be positive, got {}", self.kappa)));
        }
        if self.coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("basis weights must be finite"));
        }
        Ok(())
    }

    fn lerp(&self, other: &MaterialSample, t: f64) -> MaterialSample {
        let mix = |a: f64, b: f64| a + (b - a) * t;
        MaterialSample {
            albedo: [0, 1, 2].map(|c| mix(self.albedo[c], other.albedo[c])),
            rho: mix(self.rho, other.rho),
            // interpolate 1/κ, the quantity the network predicts
            kappa: 1.0 / mix(1.0 / self.kappa, 1.0 / other.kappa),
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| mix(*a, *b)).collect(),
        }
    }
}

/// Closed-form material fields for tests and ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnalyticField {
    Constant {
        sample: MaterialSample,
    },
    /// Linear blend along `axis` across Ω: `from` at `c − R·axis`, `to` at
    /// `c + R·axis`.
    Ramp {
        axis: [f64; 3],
        from: MaterialSample,
        to: MaterialSample,
    },
    /// Gaussian-weighted blend of two samples centered at `centers`.
    TwoLobe {
        centers: [[f64; 3]; 2],
        width: f64,
        samples: [MaterialSample; 2],
    },
}

impl AnalyticField {
    pub fn basis_count(&self) -> usize {
        match self {
            AnalyticField::Constant { sample } => sample.coeffs.len(),
            AnalyticField::Ramp { from, .. } => from.coeffs.len(),
            AnalyticField::TwoLobe { samples, .. } => samples[0].coeffs.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.basis_count();
        let samples: Vec<&MaterialSample> = match self {
            AnalyticField::Constant { sample } => vec![sample],
            AnalyticField::Ramp { from, to, .. } => vec![from, to],
            AnalyticField::TwoLobe { samples, width, .. } => {
                if !(*width > 0.0) {
                    return Err(Error::invalid("two-lobe width must be positive"));
                }
                samples.iter().collect()
            }
        };
        for s in samples {
            s.validate()?;
            if s.coeffs.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: s.coeffs.len(),
                });
            }
        }
        Ok(())
    }

    pub fn eval(&self, bounds: &BoundingSphere, x: &Vec3) -> MaterialSample {
        match self {
            AnalyticField::Constant { sample } => sample.clone(),
            AnalyticField::Ramp { axis, from, to } => {
                let a = Vec3::from(*axis).normalize();
                let t = (0.5 + 0.5 * (x - bounds.center()).dot(&a) / bounds.radius).clamp(0.0, 1.0);
                from.lerp(to, t)
            }
            AnalyticField::TwoLobe {
                centers,
                width,
                samples,
            } => {
                let w = |c: &[f64; 3]| (-(x - Vec3::from(*c)).norm_squared() / (2.0 * width * width)).exp();
                let (w0, w1) = (w(&centers[0]), w(&centers[1]));
                let t = if w0 + w1 > 0.0 { w1 / (w0 + w1) } else { 0.5 };
                samples[0].lerp(&samples[1], t)
            }
        }
    }
}

/// Architecture and initial outputs of a learnable spatial field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialFieldSpec {
    pub hidden: Vec<usize>,
    #[serde(default = "default_omega0")]
    pub omega0: f64,
    pub basis_count: usize,
    /// Outputs at initialization, realized through the last-layer bias.
    pub init: MaterialSample,
}

fn default_omega0() -> f64 {
    30.0
}

impl SpatialFieldSpec {
    pub fn mlp_spec(&self) -> MlpSpec {
        let mut sizes = vec![3];
        sizes.extend(&self.hidden);
        sizes.push(5 + self.basis_count);
        MlpSpec {
            sizes,
            activation: Activation::Sine { omega0: self.omega0 },
            init: Init::Siren,
            zero_last: false,
        }
    }
}

/// Sinusoidal network `x ↦ (a, ρ, 1/κ, c)` on positions normalized to Ω.
///
/// Raw outputs are squashed: `a = σ(·)`, `ρ = σ(·)`, `κ = 1/softplus(·)`,
/// `c` unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialField {
    pub spec: SpatialFieldSpec,
    pub mlp: Mlp,
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl SpatialField {
    pub fn register(tape: &mut ParamTape, spec: SpatialFieldSpec, rng: &mut StreamRng) -> Result<Self> {
        spec.init.validate()?;
        if spec.init.coeffs.len() != spec.basis_count {
            return Err(Error::DimensionMismatch {
                expected: spec.basis_count,
                got: spec.init.coeffs.len(),
            });
        }
        let mlp = Mlp::register(tape, "material", "material", spec.mlp_spec(), rng);
        let bias = tape.slice_mut(mlp.output_bias());
        let init = &spec.init;
        for c in 0..3 {
            bias[c] += logit(init.albedo[c]);
        }
        bias[3] += logit(init.rho);
        bias[4] += softplus_inv(1.0 / init.kappa);
        for (j, c) in init.coeffs.iter().enumerate() {
            bias[5 + j] += c;
        }
        Ok(SpatialField { spec, mlp })
    }

    fn squash(&self, raw: &[f64]) -> MaterialSample {
        MaterialSample {
            albedo: [sigmoid(raw[0]), sigmoid(raw[1]), sigmoid(raw[2])],
            rho: sigmoid(raw[3]),
            kappa: 1.0 / softplus(raw[4]),
            coeffs: raw[5..].to_vec(),
        }
    }
}

/// Material field: closed form or learnable.
#[derive(Debug, Clone, PartialEq)]
pub enum MaterialField {
    Analytic(AnalyticField),
    Network(SpatialField),
}

/// Batched material parameters as graph nodes.
pub struct MaterialVars {
    /// `[N × 3]`
    pub albedo: Var,
    /// `[N × 1]`
    pub rho: Var,
    /// `[N × 1]`, `1/κ`
    pub inv_kappa: Var,
    /// `[N × k]`
    pub coeffs: Var,
}

impl MaterialField {
    pub fn basis_count(&self) -> usize {
        match self {
            MaterialField::Analytic(a) => a.basis_count(),
            MaterialField::Network(n) => n.spec.basis_count,
        }
    }

    fn check_domain(bounds: &BoundingSphere, x: &Vec3) -> Result<()> {
        if !bounds.contains(x, DOMAIN_SLACK) {
            return Err(Error::invalid(format!(
                "position ({:.3}, {:.3}, {:.3}) lies outside the field domain",
                x.x, x.y, x.z
            )));
        }
        Ok(())
    }

    /// Appearance at `x` (millimeters).
    pub fn eval(&self, params: &[f64], bounds: &BoundingSphere, x: &Vec3) -> Result<MaterialSample> {
        Self::check_domain(bounds, x)?;
        Ok(match self {
            MaterialField::Analytic(a) => a.eval(bounds, x),
            MaterialField::Network(n) => {
                let xn = bounds.normalize(&Array2::from_shape_fn((1, 3), |(_, j)| x[j]));
                let raw = n.mlp.eval_batch(params, &xn);
                n.squash(raw.as_slice().unwrap())
            }
        })
    }

    /// Records the field at `xs` on `g`. Analytic fields become constants.
    pub fn eval_graph(&self, g: &mut Graph, bounds: &BoundingSphere, xs: &[Vec3]) -> Result<MaterialVars> {
        for x in xs {
            Self::check_domain(bounds, x)?;
        }
        let n = xs.len();
        match self {
            MaterialField::Analytic(a) => {
                let k = a.basis_count();
                let mut albedo = Array2::zeros((n, 3));
                let mut rho = Array2::zeros((n, 1));
                let mut inv_kappa = Array2::zeros((n, 1));
                let mut coeffs = Array2::zeros((n, k));
                for (i, x) in xs.iter().enumerate() {
                    let m = a.eval(bounds, x);
                    for c in 0..3 {
                        albedo[[i, c]] = m.albedo[c];
                    }
                    rho[[i, 0]] = m.rho;
                    inv_kappa[[i, 0]] = 1.0 / m.kappa;
                    for j in 0..k {
                        coeffs[[i, j]] = m.coeffs[j];
                    }
                }
                Ok(MaterialVars {
                    albedo: g.constant(albedo),
                    rho: g.constant(rho),
                    inv_kappa: g.constant(inv_kappa),
                    coeffs: g.constant(coeffs),
                })
            }
            MaterialField::Network(f) => {
                let xn = bounds.normalize(&crate::geometry::points_to_array(xs));
                let x = g.constant(xn);
                let raw = f.mlp.forward(g, x);
                let a = g.slice_cols(raw, 0, 3);
                let r = g.slice_cols(raw, 3, 1);
                let kinv = g.slice_cols(raw, 4, 1);
                let coeffs = g.slice_cols(raw, 5, f.spec.basis_count);
                Ok(MaterialVars {
                    albedo: g.sigmoid(a),
                    rho: g.sigmoid(r),
                    inv_kappa: g.softplus(kinv, 1.0),
                    coeffs,
                })
            }
        }
    }
}

/// Integrated basis tables built by oracle integration of analytic bases.
#[derive(Clone)]
pub struct BasisTables {
    pub bases: Vec<AnalyticBrdf>,
    tables: Arc<Vec<Arc<dyn Curve>>>,
    pchips: Vec<Pchip>,
}

impl std::fmt::Debug for BasisTables {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BasisTables").field("bases", &self.bases).finish()
    }
}

impl PartialEq for BasisTables {
    fn eq(&self, other: &Self) -> bool {
        self.bases == other.bases && self.pchips == other.pchips
    }
}

/// Samples per table node used by [`BasisTables::build`].
pub const TABLE_SAMPLES: usize = 1 << 14;

impl BasisTables {
    pub fn build(bases: Vec<AnalyticBrdf>, seed: u64) -> Result<Self> {
        let mut pchips = Vec::with_capacity(bases.len());
        for (j, b) in bases.iter().enumerate() {
            pchips.push(oracle::integrate_basis_table(
                b,
                oracle::TABLE_NODES,
                TABLE_SAMPLES,
                crate::rng::derive_seed(seed, j as u64),
            )?);
        }
        Ok(Self::from_tables(bases, pchips))
    }

    pub fn from_tables(bases: Vec<AnalyticBrdf>, pchips: Vec<Pchip>) -> Self {
        let tables: Vec<Arc<dyn Curve>> = pchips.iter().map(|p| Arc::new(p.clone()) as Arc<dyn Curve>).collect();
        BasisTables {
            bases,
            tables: Arc::new(tables),
            pchips,
        }
    }

    pub fn tables(&self) -> &[Pchip] {
        &self.pchips
    }
}

/// Architecture of a learnable integrated basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisNetworkSpec {
    pub hidden: Vec<usize>,
    pub basis_count: usize,
}

impl Default for BasisNetworkSpec {
    fn default() -> Self {
        BasisNetworkSpec {
            hidden: vec![128, 128, 128],
            basis_count: DEFAULT_BASIS_COUNT,
        }
    }
}

impl BasisNetworkSpec {
    pub fn mlp_spec(&self) -> MlpSpec {
        let mut sizes = vec![7];
        sizes.extend(&self.hidden);
        sizes.push(self.basis_count);
        MlpSpec {
            sizes,
            activation: Activation::Softplus { beta: 1.0 },
            init: Init::Xavier,
            zero_last: false,
        }
    }
}

/// `B(ω_o, n)`: `k` single-channel values per query.
#[derive(Debug, Clone, PartialEq)]
pub enum IntegratedBasis {
    Table(BasisTables),
    /// Network on `(ω_o, n, ω_o·n)`.
    Network { spec: BasisNetworkSpec, mlp: Mlp },
}

impl IntegratedBasis {
    pub fn register_network(tape: &mut ParamTape, spec: BasisNetworkSpec, rng: &mut StreamRng) -> Self {
        let mlp = Mlp::register(tape, "basis", "basis", spec.mlp_spec(), rng);
        IntegratedBasis::Network { spec, mlp }
    }

    pub fn count(&self) -> usize {
        match self {
            IntegratedBasis::Table(t) => t.pchips.len(),
            IntegratedBasis::Network { spec, .. } => spec.basis_count,
        }
    }

    /// Basis values for a front-facing query.
    pub fn eval(&self, params: &[f64], omega_o: &Direction, n: &Direction) -> Result<Vec<f64>> {
        let mu = omega_o.dot(n);
        if !(mu > 0.0) {
            return Err(Error::BackFacing(mu));
        }
        Ok(match self {
            IntegratedBasis::Table(t) => t.pchips.iter().map(|p| p.eval(mu)).collect(),
            IntegratedBasis::Network { mlp, .. } => {
                let input = Array2::from_shape_vec((1, 7), vec![omega_o.x(), omega_o.y(), omega_o.z(), n.x(), n.y(), n.z(), mu])
                    .unwrap();
                mlp.eval_batch(params, &input).into_raw_vec_and_offset().0
            }
        })
    }

    /// Records `B` for rows of `omega_o`, `n` (`[N × 3]`) and `mu` (`[N × 1]`).
    pub fn eval_graph(&self, g: &mut Graph, omega_o: Var, n: Var, mu: Var) -> Var {
        match self {
            IntegratedBasis::Table(t) => g.curves(mu, t.tables.clone()),
            IntegratedBasis::Network { mlp, .. } => {
                let input = g.concat_cols(&[omega_o, n, mu]);
                mlp.forward(g, input)
            }
        }
    }
}

/// `ρ · max(c·B, 0) · prefiltered` per channel.
pub fn specular_radiance(m: &MaterialSample, basis_out: &[f64], prefiltered: Rgb) -> Result<Rgb> {
    if basis_out.len() != m.coeffs.len() {
        return Err(Error::DimensionMismatch {
            expected: m.coeffs.len(),
            got: basis_out.len(),
        });
    }
    let cb: f64 = m.coeffs.iter().zip(basis_out).map(|(c, b)| c * b).sum();
    let s = m.rho * cb.max(0.0);
    Ok(prefiltered.map(|p| s * p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn bounds() -> BoundingSphere {
        BoundingSphere {
            center: [0.0; 3],
            radius: 150.0,
        }
    }

    fn gray() -> MaterialSample {
        MaterialSample::new([0.5; 3], 0.06, 64.0, vec![1.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn constant_field_returns_its_values() {
        let f = MaterialField::Analytic(AnalyticField::Constant { sample: gray() });
        let m = f.eval(&[], &bounds(), &Vec3::new(10.0, -40.0, 3.0)).unwrap();
        assert_eq!(m, gray());
        assert!(f.eval(&[], &bounds(), &Vec3::new(170.0, 0.0, 0.0)).is_err());
        assert!(f.eval(&[], &bounds(), &Vec3::new(160.0, 0.0, 0.0)).is_ok());
    }

    #[test]
    fn softplus_zero_gives_inverse_ln2() {
        let mut tape = ParamTape::new();
        let spec = SpatialFieldSpec {
            hidden: vec![16],
            omega0: 30.0,
            basis_count: 2,
            init: MaterialSample::new([0.5; 3], 0.5, 1.0 / std::f64::consts::LN_2, vec![0.0, 0.0]).unwrap(),
        };
        let f = SpatialField::register(&mut tape, spec, &mut rng::stream(1, 0)).unwrap();
        let raw = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let m = f.squash(&raw);
        assert_relative_eq!(m.kappa, 1.0 / std::f64::consts::LN_2, epsilon = 1e-12);
        assert_eq!(m.albedo, [0.5; 3]);
    }

    #[test]
    fn network_albedo_stays_in_open_unit_interval() {
        let mut tape = ParamTape::new();
        let spec = SpatialFieldSpec {
            hidden: vec![32, 32],
            omega0: 30.0,
            basis_count: 3,
            init: MaterialSample::new([0.3, 0.5, 0.7], 0.1, 20.0, vec![1.0, 0.5, 0.0]).unwrap(),
        };
        let f = MaterialField::Network(SpatialField::register(&mut tape, spec, &mut rng::stream(2, 0)).unwrap());
        let xs = bounds().sample(&mut rng::stream(3, 0), 10_000);
        let mut g = Graph::new(&tape);
        let vars = f.eval_graph(&mut g, &bounds(), &xs).unwrap();
        assert!(g.value(vars.albedo).iter().all(|a| *a > 0.0 && *a < 1.0));
        let m = f.eval(tape.values(), &bounds(), &xs[17]).unwrap();
        for c in 0..3 {
            assert_relative_eq!(m.albedo[c], g.value(vars.albedo)[[17, c]], epsilon = 1e-12);
        }
        assert_relative_eq!(1.0 / m.kappa, g.value(vars.inv_kappa)[[17, 0]], epsilon = 1e-12);
    }

    #[test]
    fn specular_arithmetic() {
        let m = gray();
        let s = specular_radiance(&m, &[2.0, 5.0, 7.0], [0.5; 3]).unwrap();
        for v in s {
            assert_relative_eq!(v, 0.06, epsilon = 1e-15);
        }
        let mut dark = gray();
        dark.rho = 0.0;
        assert_eq!(specular_radiance(&dark, &[2.0, 5.0, 7.0], [0.5; 3]).unwrap(), [0.0; 3]);
        assert!(specular_radiance(&m, &[1.0], [0.5; 3]).is_err());
        let mut r = rng::stream(5, 0);
        for _ in 0..20 {
            let b: Vec<f64> = (0..3).map(|_| r.random_range(0.0..2.0)).collect();
            let mut scaled = gray();
            scaled.coeffs = vec![0.7, 0.2, 0.1];
            let p = [0.3, 0.6, 0.9];
            let base = specular_radiance(&scaled, &b, p).unwrap();
            scaled.coeffs.iter_mut().for_each(|c| *c *= 2.5);
            let up = specular_radiance(&scaled, &b, p).unwrap();
            for c in 0..3 {
                assert_relative_eq!(up[c], 2.5 * base[c], max_relative = 1e-14);
                // one scalar material factor for all channels
                let cb: f64 = [0.7, 0.2, 0.1].iter().zip(&b).map(|(x, y)| x * y).sum();
                assert_eq!(base[c], 0.06 * cb * p[c]);
            }
        }
    }

    #[test]
    fn table_basis_signals_back_facing() {
        let t = BasisTables::build(vec![AnalyticBrdf::lambertian_basis()], 1).unwrap();
        let basis = IntegratedBasis::Table(t);
        let n = Direction::Z;
        let b = basis.eval(&[], &Direction::new(0.3, 0.0, 0.9).unwrap(), &n).unwrap();
        assert_relative_eq!(b[0], 1.0, epsilon = 1e-12);
        assert!(matches!(basis.eval(&[], &Direction::new(0.3, 0.0, -0.9).unwrap(), &n), Err(Error::BackFacing(_))));
    }

    #[test]
    fn vmf_basis_matches_hemisphere_integration() {
        let lobe = AnalyticBrdf::VmfLobe { kappa: 32.0 };
        let t = BasisTables::build(vec![lobe.clone()], 2).unwrap();
        let basis = IntegratedBasis::Table(t);
        let b = basis.eval(&[], &Direction::Z, &Direction::Z).unwrap()[0];
        let light = oracle::unit_radiance_light();
        let direct = oracle::mc_render_eq(&lobe, &Direction::Z, &Direction::Z, &light, 1_000_000, 3, oracle::Sampling::Cosine)
            .unwrap();
        assert!((b - direct.mean[0]).abs() <= 0.01 * direct.mean[0]);
    }
}
