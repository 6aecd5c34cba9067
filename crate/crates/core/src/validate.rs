//! Validation suites: closed forms against their Monte-Carlo and
//! finite-difference oracles.
//!
//! Every suite returns CSV rows plus named pass/fail gates. Tolerances are
//! the constants below.

use std::f64::consts::PI;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;

use crate::exec::ExecPolicy;
use crate::geometry::{Blob, BoundingSphere, Displacement, Prior, PriorShape, SdfField};
use crate::io::ValidationRow;
use crate::material::{AnalyticField, BasisTables, IntegratedBasis, MaterialField, MaterialSample, SpatialField, SpatialFieldSpec};
use crate::math::{Direction, Vec3};
use crate::nn::{Activation, Init, Mlp, MlpSpec};
use crate::optim::gradcheck::{check_input_gradients, check_param_gradients, GradCheckEntry, FD_STEP};
use crate::optim::{calibrate_solve, calibration_residual, loss_total, CalibrationMap, CalibrationNet, LossInputs, LossWeights};
use crate::oracle::{mc_half_cosine_projection, mc_render_eq, mc_vmf_expectation, vmf_band_ratio, AnalyticBrdf, Sampling};
use crate::render::{orbit, ForwardOptions, Model, Ray, ShadeContext};
use crate::rng::{derive_seed, stream, StreamRng};
use crate::sh::{eval_sh_basis, lambda_coeff, sh_count, vmf_attenuation, SHLight, VmfLobe};
use crate::tape::{Graph, ParamTape, Var};
use crate::{Error, Result};

pub const FUNK_HECKE_SAMPLES: usize = 10_000_000;
pub const FUNK_HECKE_L_MAX: usize = 6;
pub const FUNK_HECKE_TOL: f64 = 1e-3;

pub const VMF_KAPPAS: [f64; 5] = [16.0, 32.0, 64.0, 128.0, 256.0];
pub const VMF_L_MAX: usize = 4;
pub const VMF_SLOPE: f64 = -2.0;
pub const VMF_SLOPE_TOL: f64 = 0.5;
pub const VMF_MC_SAMPLES: usize = 1_000_000;

pub const DIFFUSE_CONFIGS: usize = 100;
pub const DIFFUSE_SAMPLES: usize = 1_000_000;
pub const DIFFUSE_RMSE: f64 = 0.01;

pub const SPLIT_KAPPAS: [f64; 3] = [16.0, 64.0, 256.0];
pub const SPLIT_BANDS: [usize; 3] = [8, 4, 2];
pub const SPLIT_TOL: f64 = 0.15;
pub const SPLIT_GRID: usize = 16;
pub const SPLIT_SAMPLES: usize = 20_000;

pub const TRACE_HIT_TOL: f64 = 0.05;
pub const WEIGHT_BETA: f64 = 0.05;
pub const WEIGHT_SUM_MIN: f64 = 0.98;
pub const REFINE_TOL: f64 = 0.005;

pub const CALIBRATION_TOL: f64 = 1e-6;
pub const CALIBRATION_MAX_COND: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Sh,
    Vmf,
    Splitsum,
    Gradients,
    Volume,
    Calibration,
    All,
}

impl Suite {
    pub const EACH: [Suite; 6] = [
        Suite::Sh,
        Suite::Vmf,
        Suite::Splitsum,
        Suite::Gradients,
        Suite::Volume,
        Suite::Calibration,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Sh => "sh",
            Suite::Vmf => "vmf",
            Suite::Splitsum => "splitsum",
            Suite::Gradients => "gradients",
            Suite::Volume => "volume",
            Suite::Calibration => "calibration",
            Suite::All => "all",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::EACH
            .iter()
            .chain(&[Suite::All])
            .find(|x| x.name() == s)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown suite `{s}` (sh, vmf, splitsum, gradients, volume, calibration, all)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SuiteReport {
    pub rows: Vec<ValidationRow>,
    pub gates: Vec<Gate>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.gates.iter().all(|g| g.passed)
    }

    pub fn failing(&self) -> impl Iterator<Item = &Gate> {
        self.gates.iter().filter(|g| !g.passed)
    }

    pub fn gate(&self, name: &str) -> Option<&Gate> {
        self.gates.iter().find(|g| g.name == name)
    }

    fn extend(&mut self, other: SuiteReport) {
        self.rows.extend(other.rows);
        self.gates.extend(other.gates);
    }

    fn row(&mut self, test: &str, parameter: impl Into<String>, estimate: f64, std_error: f64, reference: f64) {
        self.rows.push(ValidationRow {
            test: test.to_string(),
            parameter: parameter.into(),
            estimate,
            std_error,
            reference,
            rel_error: rel_error(estimate, reference),
        });
    }

    fn gate_if(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.gates.push(Gate {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
    }
}

/// `|a − b|/|b|`, or the absolute error when the reference is zero.
pub fn rel_error(estimate: f64, reference: f64) -> f64 {
    let d = (estimate - reference).abs();
    if reference == 0.0 {
        d
    } else {
        d / reference.abs()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ValidateOptions {
    pub seed: u64,
    pub policy: ExecPolicy,
}

pub fn run_suite(suite: Suite, opts: &ValidateOptions) -> Result<SuiteReport> {
    match suite {
        Suite::Sh => sh_suite(opts),
        Suite::Vmf => vmf_suite(opts),
        Suite::Splitsum => {
            let mut r = diffuse_suite(opts)?;
            r.extend(split_suite(opts)?);
            Ok(r)
        }
        Suite::Gradients => gradient_suite(opts),
        Suite::Volume => volume_suite(opts),
        Suite::Calibration => calibration_suite(opts),
        Suite::All => {
            let mut r = SuiteReport::default();
            for s in Suite::EACH {
                r.extend(run_suite(s, opts)?);
            }
            Ok(r)
        }
    }
}

/// Half-cosine kernel coefficients against a cosine-sampled projection, and
/// the exact spot values.
pub fn sh_suite(opts: &ValidateOptions) -> Result<SuiteReport> {
    let mut r = SuiteReport::default();
    let n = Direction::Z;
    let est = mc_half_cosine_projection(&n, FUNK_HECKE_L_MAX, FUNK_HECKE_SAMPLES, derive_seed(opts.seed, 1));
    let y = eval_sh_basis(&n, FUNK_HECKE_L_MAX)?;
    let mut worst: f64 = 0.0;
    for l in 0..=FUNK_HECKE_L_MAX {
        // at the pole only m = 0 survives, so the coefficient is the ratio
        let k = l * l + l;
        let mc = est.mean[k] / y[k];
        let se = est.std_error[k] / y[k];
        let exact = lambda_coeff(l);
        worst = worst.max((mc - exact).abs());
        r.row("funk_hecke", format!("l={l}"), mc, se, exact);
    }
    r.gate_if(
        "sh.funk_hecke",
        worst <= FUNK_HECKE_TOL,
        format!("max |MC - closed form| = {worst:.2e} (tol {FUNK_HECKE_TOL:e})"),
    );

    // full projection at a generic normal: ∫Y_k (ω·n)⁺ = Λ_l Y_k(n)
    let n2 = Direction::normalize(Vec3::new(0.3, -0.5, 0.81))?;
    let est = mc_half_cosine_projection(&n2, FUNK_HECKE_L_MAX, FUNK_HECKE_SAMPLES, derive_seed(opts.seed, 2));
    let y = eval_sh_basis(&n2, FUNK_HECKE_L_MAX)?;
    let mut worst: f64 = 0.0;
    for k in 0..sh_count(FUNK_HECKE_L_MAX) {
        let exact = lambda_coeff(crate::sh::band_of(k)) * y[k];
        worst = worst.max((est.mean[k] - exact).abs());
    }
    r.row("funk_hecke_rotated", "max_abs_error", worst, 0.0, 0.0);
    r.gate_if(
        "sh.funk_hecke_rotated",
        worst <= FUNK_HECKE_TOL,
        format!("max |MC - Λ_l Y_lm(n)| = {worst:.2e}"),
    );

    let l1 = lambda_coeff(1);
    r.row("lambda_spot", "l=1", l1, 0.0, 2.0 * PI / 3.0);
    let odd: Vec<f64> = (3..=19).step_by(2).map(lambda_coeff).collect();
    for (i, v) in odd.iter().enumerate() {
        r.row("lambda_spot", format!("l={}", 3 + 2 * i), *v, 0.0, 0.0);
    }
    r.gate_if(
        "sh.lambda_spot",
        l1 == 2.0 * PI / 3.0 && odd.iter().all(|v| *v == 0.0),
        "Λ_1 = 2π/3 and Λ_odd≥3 = 0 exactly",
    );
    Ok(r)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Error of the exponential band attenuation against the exact Bessel
/// ratio, swept over κ; the exact ratio is itself checked by Monte Carlo.
pub fn vmf_suite(opts: &ValidateOptions) -> Result<SuiteReport> {
    let mut r = SuiteReport::default();
    for l in 1..=VMF_L_MAX {
        let errs: Vec<f64> = VMF_KAPPAS
            .iter()
            .map(|&k| (vmf_attenuation(l, k) - vmf_band_ratio(l, k)).abs())
            .collect();
        for (k, e) in VMF_KAPPAS.iter().zip(&errs) {
            r.row("vmf_error", format!("l={l};kappa={k}"), vmf_attenuation(l, *k), 0.0, vmf_band_ratio(l, *k));
            let _ = e;
        }
        let slope = loglog_slope(&VMF_KAPPAS, &errs);
        r.row("vmf_slope", format!("l={l}"), slope, 0.0, VMF_SLOPE);
        r.gate_if(
            &format!("vmf.slope_l{l}"),
            (slope - VMF_SLOPE).abs() <= VMF_SLOPE_TOL,
            format!("log-log slope {slope:.3}"),
        );
    }

    // exact ratio vs E_vMF[Y_lm] / Y_lm(axis)
    let axis = Direction::normalize(Vec3::new(0.2, 0.4, 0.89))?;
    let y = eval_sh_basis(&axis, VMF_L_MAX)?;
    let mut ok = true;
    for (i, &kappa) in [16.0, 64.0].iter().enumerate() {
        let lobe = VmfLobe::new(axis, kappa)?;
        for l in 1..=VMF_L_MAX {
            let k = l * l + l;
            let est = mc_vmf_expectation(l, 0, &lobe, VMF_MC_SAMPLES, derive_seed(opts.seed, (10 * i + l) as u64))?;
            let exact = vmf_band_ratio(l, kappa) * y[k];
            ok &= (est.mean - exact).abs() <= 5.0 * est.std_error + 1e-9;
            r.row("vmf_expectation", format!("l={l};kappa={kappa}"), est.mean, est.std_error, exact);
        }
    }
    r.gate_if("vmf.band_ratio_mc", ok, "exact band ratio within 5 standard errors of Monte Carlo");
    Ok(r)
}

fn random_light(rng: &mut StreamRng, l_max: usize, dc: f64, spread: f64) -> Result<SHLight> {
    let k = sh_count(l_max);
    let mut coeffs = Vec::with_capacity(3 * k);
    for _ in 0..3 {
        for j in 0..k {
            let l = crate::sh::band_of(j);
            coeffs.push(if j == 0 {
                dc * (0.8 + 0.4 * rng.random::<f64>())
            } else {
                spread * (2.0 * rng.random::<f64>() - 1.0) / (1.0 + l as f64)
            });
        }
    }
    SHLight::new(l_max, coeffs)
}

fn random_direction(rng: &mut StreamRng) -> Result<Direction> {
    let v = crate::math::uniform_sphere(rng.random(), rng.random());
    Direction::normalize(v)
}

fn shading_scene(material: MaterialField, basis: IntegratedBasis) -> (SdfField, MaterialField, IntegratedBasis) {
    let bounds = BoundingSphere {
        center: [0.0; 3],
        radius: 150.0,
    };
    let sdf = SdfField::new(
        PriorShape::new(Prior::Sphere {
            center: [0.0; 3],
            radius: 100.0,
        }),
        bounds,
        Displacement::None,
    );
    (sdf, material, basis)
}

/// Lambertian shading against the rendering-equation oracle on random
/// light, normal and albedo configurations.
pub fn diffuse_suite(opts: &ValidateOptions) -> Result<SuiteReport> {
    let mut r = SuiteReport::default();
    let mut rng = stream(derive_seed(opts.seed, 20), 0);
    let basis = IntegratedBasis::Table(BasisTables::build(vec![AnalyticBrdf::VmfLobe { kappa: 32.0 }], 1)?);
    let mut sq = 0.0;
    let mut count = 0usize;
    for i in 0..DIFFUSE_CONFIGS {
        let light = random_light(&mut rng, 3, 1.5, 0.6)?;
        let n = random_direction(&mut rng)?;
        let albedo = [0, 1, 2].map(|_| 0.1 + 0.8 * rng.random::<f64>());
        // a view direction in the upper hemisphere of n
        let wo = loop {
            let d = random_direction(&mut rng)?;
            if d.dot(&n) > 0.05 {
                break d;
            }
        };
        let sample = MaterialSample::new(albedo, 0.0, 32.0, vec![1.0])?;
        let (sdf, material, basis) = shading_scene(MaterialField::Analytic(AnalyticField::Constant { sample }), basis.clone());
        let ctx = ShadeContext {
            params: &[],
            field: &sdf,
            material: &material,
            basis: &basis,
            light: &light,
        };
        let x = n.vec() * 100.0;
        let shaded = ctx.shade_with_normal(&x, &n, &wo)?.total();
        let mc = mc_render_eq(
            &AnalyticBrdf::Lambertian { albedo },
            &n,
            &wo,
            &light,
            DIFFUSE_SAMPLES,
            derive_seed(opts.seed, 1000 + i as u64),
            Sampling::Cosine,
        )?;
        for c in 0..3 {
            let e = (shaded[c] - mc.mean[c]) / mc.mean[c];
            sq += e * e;
            count += 1;
            r.row("diffuse", format!("config={i};channel={c}"), shaded[c], mc.std_error[c], mc.mean[c]);
        }
    }
    let rmse = (sq / count as f64).sqrt();
    r.gate_if(
        "splitsum.diffuse",
        rmse <= DIFFUSE_RMSE,
        format!("relative RMSE {rmse:.2e} over {DIFFUSE_CONFIGS} configurations"),
    );
    Ok(r)
}

/// Relative RMS error of the split-integral specular term against the
/// rendering equation for a vMF lobe BRDF, on an orthographic sphere image.
pub fn split_error(kappa: f64, light: &SHLight, seed: u64) -> Result<f64> {
    let table = BasisTables::build(vec![AnalyticBrdf::VmfLobe { kappa }], derive_seed(seed, 1))?;
    let basis = IntegratedBasis::Table(table);
    let brdf = AnalyticBrdf::VmfLobe { kappa };
    let wo = Direction::Z;
    let sample = MaterialSample::new([0.0; 3], 1.0, kappa, vec![1.0])?;
    let (sdf, material, basis) = shading_scene(MaterialField::Analytic(AnalyticField::Constant { sample }), basis);
    let ctx = ShadeContext {
        params: &[],
        field: &sdf,
        material: &material,
        basis: &basis,
        light,
    };
    let mut pixels = Vec::new();
    for i in 0..SPLIT_GRID {
        for j in 0..SPLIT_GRID {
            let u = -0.95 + 1.9 * (i as f64 + 0.5) / SPLIT_GRID as f64;
            let v = -0.95 + 1.9 * (j as f64 + 0.5) / SPLIT_GRID as f64;
            if u * u + v * v < 0.95 * 0.95 {
                pixels.push(Vec3::new(u, v, (1.0 - u * u - v * v).sqrt()));
            }
        }
    }
    let results = ExecPolicy::default().map(pixels.len(), |p| -> Result<(f64, f64)> {
        let n = Direction::normalize(pixels[p])?;
        let spec = ctx.shade_with_normal(&(n.vec() * 100.0), &n, &wo)?.specular;
        // common random numbers across configurations
        let mc = mc_render_eq(&brdf, &n, &wo, light, SPLIT_SAMPLES, derive_seed(seed, p as u64), Sampling::Importance)?;
        let mut num = 0.0;
        let mut den = 0.0;
        for c in 0..3 {
            num += (spec[c] - mc.mean[c]).powi(2);
            den += mc.mean[c].powi(2);
        }
        Ok((num, den))
    });
    let mut num = 0.0;
    let mut den = 0.0;
    for x in results {
        let (a, b) = x?;
        num += a;
        den += b;
    }
    Ok((num / den).sqrt())
}

pub fn split_suite(opts: &ValidateOptions) -> Result<SuiteReport> {
    let mut r = SuiteReport::default();
    let mut rng = stream(derive_seed(opts.seed, 30), 0);
    let full = random_light(&mut rng, *SPLIT_BANDS.iter().max().unwrap(), 1.0, 0.5)?;
    let seed = derive_seed(opts.seed, 31);

    let order2 = full.truncated(2);
    let by_kappa: Vec<f64> = SPLIT_KAPPAS.iter().map(|&k| split_error(k, &order2, seed)).collect::<Result<_>>()?;
    for (k, e) in SPLIT_KAPPAS.iter().zip(&by_kappa) {
        r.row("split_kappa", format!("kappa={k};l_max=2"), *e, 0.0, 0.0);
    }
    let at64 = by_kappa[SPLIT_KAPPAS.iter().position(|k| *k == 64.0).unwrap()];
    r.gate_if(
        "splitsum.kappa64_order2",
        at64 <= SPLIT_TOL,
        format!("relative error {at64:.4} at κ=64, order-2 light (tol {SPLIT_TOL})"),
    );
    r.gate_if(
        "splitsum.monotone_kappa",
        by_kappa.windows(2).all(|w| w[1] < w[0]),
        format!("errors over κ {SPLIT_KAPPAS:?}: {by_kappa:.4?}"),
    );

    let by_band: Vec<f64> = SPLIT_BANDS
        .iter()
        .map(|&l| split_error(64.0, &full.truncated(l), seed))
        .collect::<Result<_>>()?;
    for (l, e) in SPLIT_BANDS.iter().zip(&by_band) {
        r.row("split_band", format!("kappa=64;l_max={l}"), *e, 0.0, 0.0);
    }
    r.gate_if(
        "splitsum.monotone_band",
        by_band.windows(2).all(|w| w[1] < w[0]),
        format!("errors over l_max {SPLIT_BANDS:?}: {by_band:.4?}"),
    );
    Ok(r)
}

fn summarize_grads(r: &mut SuiteReport, name: &str, entries: &[GradCheckEntry]) {
    let compared: Vec<&GradCheckEntry> = entries.iter().filter(|e| e.compared()).collect();
    let worst = compared.iter().map(|e| e.rel_error()).fold(0.0, f64::max);
    for e in &compared {
        r.row(&format!("grad_{name}"), format!("{}[{}]", e.name, e.index), e.analytic, 0.0, e.numeric);
    }
    r.gate_if(
        &format!("gradients.{name}"),
        !compared.is_empty() && entries.iter().all(|e| e.passes()),
        format!("{} entries compared, worst relative error {worst:.2e}", compared.len()),
    );
}

fn rand_array(rng: &mut StreamRng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| lo + (hi - lo) * rng.random::<f64>())
}

/// Values kept away from zero so `relu`/`abs` kinks are not straddled.
fn off_zero(rng: &mut StreamRng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let m = 0.2 + 0.8 * rng.random::<f64>();
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

type Primitive = Box<dyn Fn(&mut Graph, Var) -> Var>;

/// Weighted sum so every output entry carries a distinct cotangent.
fn contract(g: &mut Graph, y: Var, seed: u64) -> Var {
    let (rows, cols) = g.shape(y);
    let mut rng = stream(seed, 99);
    let w = g.constant(rand_array(&mut rng, rows, cols, 0.5, 1.5));
    let p = g.mul(y, w);
    g.sum(p)
}

fn primitive_battery(seed: u64) -> Vec<(&'static str, Array2<f64>, Primitive)> {
    let mut rng = stream(seed, 40);
    let mut out: Vec<(&'static str, Array2<f64>, Primitive)> = Vec::new();
    let pos = rand_array(&mut rng, 3, 4, 0.3, 2.0);
    let any = rand_array(&mut rng, 3, 4, -1.5, 1.5);
    let kinky = off_zero(&mut rng, 3, 4);
    let other = rand_array(&mut rng, 3, 4, 0.5, 1.5);
    let col = rand_array(&mut rng, 3, 1, 0.5, 1.5);
    let rhs = rand_array(&mut rng, 4, 2, -1.0, 1.0);
    let lhs = rand_array(&mut rng, 2, 3, -1.0, 1.0);
    let dirs = rand_array(&mut rng, 4, 3, -1.0, 1.0);
    let mats = rand_array(&mut rng, 2, 9, -1.0, 1.0);
    let vecs = rand_array(&mut rng, 2, 3, -1.0, 1.0);
    let mu = rand_array(&mut rng, 5, 1, 0.05, 0.95);

    macro_rules! unary {
        ($name:literal, $x:expr, $op:expr) => {{
            let op = $op;
            let f: Primitive = Box::new(move |g: &mut Graph, x: Var| {
                let y = op(g, x);
                contract(g, y, 1)
            });
            out.push(($name, $x.clone(), f));
        }};
    }
    unary!("neg", any, |g: &mut Graph, x| g.neg(x));
    unary!("exp", any, |g: &mut Graph, x| g.exp(x));
    unary!("ln", pos, |g: &mut Graph, x| g.ln(x));
    unary!("sin", any, |g: &mut Graph, x| g.sin(x));
    unary!("cos", any, |g: &mut Graph, x| g.cos(x));
    unary!("sigmoid", any, |g: &mut Graph, x| g.sigmoid(x));
    unary!("softplus", any, |g: &mut Graph, x| g.softplus(x, 3.0));
    unary!("relu", kinky, |g: &mut Graph, x| g.relu(x));
    unary!("abs", kinky, |g: &mut Graph, x| g.abs(x));
    unary!("sqrt", pos, |g: &mut Graph, x| g.sqrt(x));
    unary!("square", any, |g: &mut Graph, x| g.square(x));
    unary!("recip", pos, |g: &mut Graph, x| g.recip(x));
    unary!("laplace_cdf", any, |g: &mut Graph, x| g.laplace_cdf(x));
    unary!("scale", any, |g: &mut Graph, x| g.scale(x, -2.5));
    unary!("add_scalar", any, |g: &mut Graph, x| g.add_scalar(x, 0.7));
    unary!("transpose", any, |g: &mut Graph, x| g.transpose(x));
    unary!("reshape", any, |g: &mut Graph, x| g.reshape(x, 2, 6));
    unary!("slice_cols", any, |g: &mut Graph, x| g.slice_cols(x, 1, 2));
    unary!("sum_cols", any, |g: &mut Graph, x| g.sum_cols(x));
    unary!("sum_rows", any, |g: &mut Graph, x| g.sum_rows(x));
    unary!("mean", any, |g: &mut Graph, x| g.mean(x));
    unary!("group_sum_rows", rand_array(&mut rng, 6, 2, -1.0, 1.0), |g: &mut Graph, x| g.group_sum_rows(x, 3));
    unary!("repeat_rows", any, |g: &mut Graph, x| g.repeat_rows(x, 2));
    unary!("cumsum_exclusive_cols", any, |g: &mut Graph, x| g.cumsum_exclusive_cols(x));
    unary!("gather_rows", any, |g: &mut Graph, x| g.gather_rows(x, vec![2, 0, 2, 1]));
    unary!("norm_rows", any, |g: &mut Graph, x| g.norm_rows(x, 1e-12));
    unary!("sh_basis", dirs, |g: &mut Graph, x| g.sh_basis(x, 4));

    let o = other.clone();
    unary!("add", any, move |g: &mut Graph, x| {
        let c = g.constant(o.clone());
        g.add(x, c)
    });
    let o = other.clone();
    unary!("sub", any, move |g: &mut Graph, x| {
        let c = g.constant(o.clone());
        g.sub(c, x)
    });
    let o = other.clone();
    unary!("mul", any, move |g: &mut Graph, x| {
        let c = g.constant(o.clone());
        g.mul(x, c)
    });
    let o = other.clone();
    unary!("div_numerator", any, move |g: &mut Graph, x| {
        let c = g.constant(o.clone());
        g.div(x, c)
    });
    let a = any.clone();
    unary!("div_denominator", pos, move |g: &mut Graph, x| {
        let c = g.constant(a.clone());
        g.div(c, x)
    });
    let a = any.clone();
    unary!("mul_broadcast_col", col, move |g: &mut Graph, x| {
        let c = g.constant(a.clone());
        g.mul(c, x)
    });
    let a = any.clone();
    unary!("add_broadcast_scalar", rand_array(&mut rng, 1, 1, -1.0, 1.0), move |g: &mut Graph, x| {
        let c = g.constant(a.clone());
        g.add(c, x)
    });
    let b = rhs.clone();
    unary!("matmul_left", any, move |g: &mut Graph, x| {
        let c = g.constant(b.clone());
        g.matmul(x, c)
    });
    let a = lhs.clone();
    unary!("matmul_right", any, move |g: &mut Graph, x| {
        let c = g.constant(a.clone());
        g.matmul(c, x)
    });
    let o = other.clone();
    unary!("concat_cols", any, move |g: &mut Graph, x| {
        let c = g.constant(o.clone());
        g.concat_cols(&[c, x, c])
    });
    let o = other.clone();
    unary!("concat_rows", any, move |g: &mut Graph, x| {
        let c = g.constant(o.clone());
        g.concat_rows(&[x, c])
    });
    let o = other.clone();
    unary!("dot_rows", any, move |g: &mut Graph, x| {
        let c = g.constant(o.clone());
        g.dot_rows(x, c)
    });
    let v = vecs.clone();
    unary!("row_mat3_vec_matrix", mats, move |g: &mut Graph, x| {
        let c = g.constant(v.clone());
        g.row_mat3_vec(x, c)
    });
    let m = mats.clone();
    unary!("row_mat3_vec_vector", vecs, move |g: &mut Graph, x| {
        let c = g.constant(m.clone());
        g.row_mat3_vec(c, x)
    });
    let curves = BasisTables::build(vec![AnalyticBrdf::VmfLobe { kappa: 16.0 }, AnalyticBrdf::PhongLobe { exponent: 8.0 }], 3)
        .expect("valid bases");
    unary!("curves", mu, move |g: &mut Graph, x| {
        let basis = IntegratedBasis::Table(curves.clone());
        let dummy = g.constant(Array2::zeros((5, 3)));
        basis.eval_graph(g, dummy, dummy, x)
    });
    out
}

/// A small scene with every learnable component, used by the composed
/// gradient checks.
pub fn gradient_test_model(seed: u64) -> Result<Model> {
    let bounds = BoundingSphere {
        center: [0.0; 3],
        radius: 150.0,
    };
    let mut tape = ParamTape::new();
    let mut rng = stream(seed, 50);
    let disp = Mlp::register(
        &mut tape,
        "displacement",
        "geometry",
        MlpSpec {
            sizes: vec![SdfField::encoding_width(), 8, 1],
            activation: Activation::Softplus { beta: 10.0 },
            init: Init::Xavier,
            zero_last: false,
        },
        &mut rng,
    );
    // keep the perturbation well below a millimeter
    for h in disp.handles().iter().skip(2) {
        tape.slice_mut(*h).iter_mut().for_each(|v| *v *= 0.05);
    }
    let spec = SpatialFieldSpec {
        hidden: vec![8],
        omega0: 5.0,
        basis_count: 2,
        init: MaterialSample::new([0.6, 0.5, 0.4], 0.3, 24.0, vec![0.7, 0.4])?,
    };
    let mat = SpatialField::register(&mut tape, spec, &mut rng)?;
    let basis = IntegratedBasis::Table(BasisTables::build(
        vec![AnalyticBrdf::VmfLobe { kappa: 16.0 }, AnalyticBrdf::VmfLobe { kappa: 32.0 }],
        4,
    )?);
    let sdf = SdfField::new(
        PriorShape::new(Prior::Blobs {
            blobs: vec![
                Blob {
                    center: [-20.0, 0.0, 0.0],
                    radius: 80.0,
                },
                Blob {
                    center: [40.0, 10.0, 0.0],
                    radius: 60.0,
                },
            ],
            blend: 10.0,
        }),
        bounds,
        Displacement::Network(disp),
    );
    let mut model = Model::new(sdf, MaterialField::Network(mat), basis, SHLight::constant(2, [0.0; 3]));
    model.tape = tape;
    let mut lrng = stream(seed, 51);
    let light = random_light(&mut lrng, 2, 1.2, 0.5)?;
    model.make_light_learnable(&light);
    model.make_beta_learnable(0.5);
    Ok(model)
}

fn probe_rays(seed: u64, n: usize) -> Result<Vec<Ray>> {
    let cam = &orbit(Vec3::zeros(), 300.0, 1, 10.0, 20.0, 32, 60.0)?[0];
    let mut rng = stream(seed, 52);
    Ok((0..n).map(|_| cam.ray_index(rng.random_range(0..cam.pixel_count()))).collect())
}

/// Flat indices spread over every tape entry.
fn spread_indices(tape: &ParamTape, per_entry: usize) -> Vec<usize> {
    let mut idx = Vec::new();
    for e in tape.entries() {
        let r = e.handle.range();
        let step = (r.len() / per_entry).max(1);
        idx.extend(r.step_by(step).take(per_entry));
    }
    idx
}

pub fn gradient_suite(opts: &ValidateOptions) -> Result<SuiteReport> {
    let mut r = SuiteReport::default();
    for (name, input, f) in primitive_battery(opts.seed) {
        let entries = check_input_gradients(name, &input, FD_STEP, f);
        summarize_grads(&mut r, name, &entries);
    }

    let model = gradient_test_model(opts.seed)?;
    let rays = probe_rays(opts.seed, 24)?;
    let traces = model.trace(&rays);
    let fopts = ForwardOptions::default();
    let idx = spread_indices(&model.tape, 6);

    // 1. render: trace held fixed, everything downstream differentiated
    let entries = check_param_gradients(&model.tape, &idx, FD_STEP, |g| {
        let out = model.forward_traced(g, &rays, traces.clone(), &fopts).expect("forward");
        let s = g.add(out.rgb, out.specular);
        contract(g, s, 2)
    });
    summarize_grads(&mut r, "composed_render", &entries);

    // 2. training loss: calibration network, photometric and all regularizers
    let mut tape = model.tape.clone();
    let mut rng = stream(opts.seed, 53);
    let net = CalibrationNet::register(&mut tape, 3, &mut rng);
    for h in net.mlp.handles() {
        tape.slice_mut(h).iter_mut().enumerate().for_each(|(i, v)| *v += 0.05 * ((i as f64) * 0.7).sin());
    }
    let ids: Vec<usize> = (0..rays.len()).map(|i| i % 3).collect();
    let observed = rand_array(&mut rng, rays.len(), 3, 0.0, 1.0);
    let xs = model.sdf.bounds.sample(&mut rng, 32);
    let idx2 = spread_indices(&tape, 5);
    let weights = LossWeights::default();
    let entries = check_param_gradients(&tape, &idx2, FD_STEP, |g| {
        let out = model.forward_traced(g, &rays, traces.clone(), &fopts).expect("forward");
        let rgb = net.apply(g, out.rgb, &ids);
        let sdf = model.sdf.eval_graph(g, &xs);
        let light = model.light_var(g);
        loss_total(
            g,
            LossInputs {
                rendered: Some((rgb, observed.clone())),
                light: Some(light),
                specular: Some(out.specular),
                sdf_gradient: Some(sdf.gradient),
                displacement: Some(sdf.displacement),
            },
            &weights,
        )
        .total
    });
    summarize_grads(&mut r, "composed_loss", &entries);

    // 3. SDF tangent path: normals from the displacement network's input
    // derivatives, shaded by the SH light, plus the eikonal term
    let pts = model.sdf.bounds.sample(&mut rng, 12);
    let entries = check_param_gradients(&model.tape, &idx, FD_STEP, |g| {
        let sdf = model.sdf.eval_graph(g, &pts);
        let n = g.norm_rows(sdf.gradient, 1e-12);
        let unit = g.div(sdf.gradient, n);
        let (light, l_max) = model.light_var(g);
        let y = g.sh_basis(unit, l_max);
        let irr = g.matmul(y, light);
        let shade = contract(g, irr, 3);
        let eik = crate::optim::loss::eikonal_loss(g, sdf.gradient);
        let v = contract(g, sdf.value, 4);
        let s = g.add(shade, eik);
        g.add(s, v)
    });
    summarize_grads(&mut r, "composed_sdf", &entries);
    Ok(r)
}

/// Sphere-trace residuals, weight sums on surface-crossing rays, and the
/// effect of doubling the window sample count.
pub fn volume_suite(opts: &ValidateOptions) -> Result<SuiteReport> {
    let mut r = SuiteReport::default();
    let mut model = gradient_test_model(opts.seed)?;
    let cam = &orbit(Vec3::zeros(), 300.0, 1, 15.0, 30.0, 48, 55.0)?[0];
    let rays: Vec<Ray> = (0..cam.pixel_count()).map(|i| cam.ray_index(i)).collect();
    let traces = model.trace(&rays);

    let mut worst: f64 = 0.0;
    let mut hits = 0;
    for (ray, tr) in rays.iter().zip(&traces) {
        if let Some(t) = tr.hit_t() {
            hits += 1;
            worst = worst.max(model.sdf.eval(model.params(), &ray.at(t)).abs());
        }
    }
    r.row("trace_hit", format!("hits={hits}"), worst, 0.0, TRACE_HIT_TOL);
    r.gate_if(
        "volume.trace_hits",
        hits > 0 && worst < TRACE_HIT_TOL,
        format!("{hits} hits, max |SDF| at hit {worst:.2e}"),
    );

    model.beta = crate::render::BetaSource::Fixed(WEIGHT_BETA);
    let fopts = ForwardOptions::default();
    let mut min_sum = f64::INFINITY;
    let mut crossing = 0;
    for (chunk_rays, chunk_traces) in rays.chunks(256).zip(traces.chunks(256)) {
        let tape = model.tape.clone();
        let mut g = Graph::new(&tape);
        let out = model.forward_traced(&mut g, chunk_rays, chunk_traces.to_vec(), &fopts)?;
        for ((ray, tr), w) in chunk_rays.iter().zip(chunk_traces).zip(&out.weight_sums) {
            if let Some(t) = tr.hit_t() {
                let end = ray.at(t + crate::render::volume::WINDOW_HALF_WIDTH);
                if model.sdf.eval(model.params(), &end) < 0.0 {
                    crossing += 1;
                    min_sum = min_sum.min(*w);
                }
            }
        }
    }
    r.row("weight_sum", format!("beta={WEIGHT_BETA};rays={crossing}"), min_sum, 0.0, WEIGHT_SUM_MIN);
    r.gate_if(
        "volume.weight_sums",
        crossing > 0 && min_sum >= WEIGHT_SUM_MIN,
        format!("{crossing} surface-crossing rays, min weight sum {min_sum:.4}"),
    );

    model.beta = crate::render::BetaSource::Fixed(crate::render::DEFAULT_BETA);
    let render = |samples: usize| -> Result<Vec<[f64; 3]>> {
        let opts = crate::render::RenderOptions {
            forward: ForwardOptions {
                window_samples: samples,
                ..ForwardOptions::default()
            },
            policy: opts_policy(opts),
        };
        Ok(crate::render::render_image(&model, cam, &opts)?.image.pixels().to_vec())
    };
    let a = render(32)?;
    let b = render(64)?;
    let mut worst: f64 = 0.0;
    for (p, q) in a.iter().zip(&b) {
        let mag = q.iter().sum::<f64>() / 3.0;
        if mag > 1e-3 {
            let d = (0..3).map(|c| (p[c] - q[c]).abs()).sum::<f64>() / 3.0;
            worst = worst.max(d / mag);
        }
    }
    r.row("window_refinement", "32->64", worst, 0.0, REFINE_TOL);
    r.gate_if(
        "volume.refinement",
        worst < REFINE_TOL,
        format!("max relative pixel change {worst:.2e}"),
    );
    Ok(r)
}

fn opts_policy(o: &ValidateOptions) -> ExecPolicy {
    o.policy
}

/// Random matrix with condition number below [`CALIBRATION_MAX_COND`].
pub fn well_conditioned_map(rng: &mut StreamRng) -> CalibrationMap {
    loop {
        let m = nalgebra::Matrix3::from_fn(|i, j| if i == j { 1.0 } else { 0.0 } + 0.4 * (2.0 * rng.random::<f64>() - 1.0));
        let sv = m.singular_values();
        if sv.min() > 0.0 && sv.max() / sv.min() < CALIBRATION_MAX_COND {
            return CalibrationMap::from_matrix(&m);
        }
    }
}

pub fn calibration_suite(opts: &ValidateOptions) -> Result<SuiteReport> {
    let mut r = SuiteReport::default();
    let mut rng = stream(derive_seed(opts.seed, 60), 0);
    let mut worst: f64 = 0.0;
    for trial in 0..10 {
        let a = well_conditioned_map(&mut rng);
        let rendered: Vec<[f64; 3]> = (0..400).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let observed: Vec<[f64; 3]> = rendered.iter().map(|p| a.apply(*p)).collect();
        let fit = calibrate_solve(&rendered, &observed)?;
        let (m, t) = (fit.map.to_matrix(), a.to_matrix());
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((m[(i, j)] - t[(i, j)]).abs());
                r.row("calibration_recover", format!("trial={trial};entry={i}{j}"), m[(i, j)], 0.0, t[(i, j)]);
            }
        }
    }
    r.gate_if(
        "calibration.recover",
        worst <= CALIBRATION_TOL,
        format!("max entry error {worst:.2e} (tol {CALIBRATION_TOL:e})"),
    );

    let rendered: Vec<[f64; 3]> = (0..200).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let fit = calibrate_solve(&rendered, &rendered)?;
    let id = fit.map.to_matrix() - nalgebra::Matrix3::identity();
    let e = id.abs().max();
    r.row("calibration_identity", "max_entry_error", e, 0.0, 0.0);
    r.gate_if("calibration.identity", e <= 1e-10, format!("max deviation from identity {e:.2e}"));

    // rank 1: gray pixels; the unregularized optimum maps gray to the
    // per-channel least-squares ratio
    let gray: Vec<[f64; 3]> = (0..200).map(|_| [rng.random::<f64>(); 3]).map(|v| [v[0]; 3]).collect();
    let target = [0.9, 0.7, 0.5];
    let observed: Vec<[f64; 3]> = gray
        .iter()
        .map(|p| [0, 1, 2].map(|c| p[c] * target[c] + 0.01 * rng.random::<f64>()))
        .collect();
    let fit = calibrate_solve(&gray, &observed)?;
    let optimum = {
        let mut res = 0.0;
        for c in 0..3 {
            let num: f64 = gray.iter().zip(&observed).map(|(g, o)| g[0] * o[c]).sum();
            let den: f64 = gray.iter().map(|g| g[0] * g[0]).sum();
            let k = num / den;
            res += gray.iter().zip(&observed).map(|(g, o)| (k * g[0] - o[c]).powi(2)).sum::<f64>();
        }
        res
    };
    let res = calibration_residual(&fit.map, &gray, &observed);
    r.row("calibration_rank1", format!("rank={}", fit.rank), res, 0.0, optimum);
    r.gate_if(
        "calibration.ridge",
        fit.ridge && res <= optimum + 1e-6,
        format!("ridge={} residual {res:.3e} vs optimum {optimum:.3e}", fit.ridge),
    );
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_roundtrip() {
        for s in Suite::EACH.iter().chain(&[Suite::All]) {
            assert_eq!(s.name().parse::<Suite>().unwrap(), *s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn slope_of_a_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-2.0)).collect();
        assert!((loglog_slope(&xs, &ys) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn calibration_suite_passes() {
        let r = calibration_suite(&ValidateOptions::default()).unwrap();
        assert!(r.passed(), "{:?}", r.failing().collect::<Vec<_>>());
    }
}
