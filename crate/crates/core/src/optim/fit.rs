//! Multi-view fitting loop.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::exec::{chunk_count, ExecPolicy};
use crate::io::{read_blob, write_blob, Image};
use crate::metrics::{psnr, ssim, MetricsReport};
use crate::render::{render_image, CameraModel, ForwardOptions, LightSource, Model, Ray, RenderOptions, BetaSource, DEFAULT_BETA};
use crate::rng::{derive_seed, stream};
use crate::tape::Graph;
use crate::{Error, Result};

use super::adam::{adam_step, AdamParams, AdamState, LrSchedule};
use super::calibration::{calibrate_images, CalibrationMap, CalibrationNet};
use super::loss::{loss_total, LossBreakdown, LossInputs, LossWeights};

/// Rays per gradient chunk. Chunk boundaries never depend on thread count.
pub const FIT_CHUNK: usize = 256;

const TAG_RAYS: u64 = 1;
const TAG_OMEGA: u64 = 2;
const TAG_CALIBRATION: u64 = 3;

fn default_steps() -> usize {
    2000
}
fn default_batch() -> usize {
    2048
}
fn default_lr() -> f64 {
    1e-4
}
fn default_halvings() -> usize {
    6
}
fn default_geometry_samples() -> usize {
    1024
}
fn default_true() -> bool {
    true
}
fn default_beta() -> f64 {
    DEFAULT_BETA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_rays: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub deterministic: bool,
    /// Spread ray chunks over the thread pool.
    #[serde(default = "default_true")]
    pub parallel: bool,
    /// Number of halvings spread over the first 75% of steps.
    #[serde(default = "default_halvings")]
    pub lr_halvings: usize,
    /// Learning-rate multipliers by parameter group.
    #[serde(default)]
    pub group_lr: BTreeMap<String, f64>,
    #[serde(default = "default_geometry_samples")]
    pub geometry_samples: usize,
    /// Holdout evaluation period in steps; 0 evaluates only at the end.
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default = "default_true")]
    pub calibration: bool,
    #[serde(default = "default_true")]
    pub learn_light: bool,
    #[serde(default = "default_true")]
    pub learn_beta: bool,
    #[serde(default = "default_beta")]
    pub initial_beta: f64,
    /// Reuse the first ray batch and Ω sample set on every step.
    #[serde(default)]
    pub fixed_batch: bool,
    #[serde(default)]
    pub adam: AdamParams,
}

impl Default for FitConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults parse")
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_rays == 0 {
            return Err(Error::Schema("steps and batch_rays must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Schema(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.initial_beta > 0.0) {
            return Err(Error::Schema("initial_beta must be positive".into()));
        }
        let w = &self.weights;
        if [w.rgb, w.white, w.spec, w.eikonal, w.residual].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Schema("loss weights must be non-negative".into()));
        }
        if self.group_lr.values().any(|v| !(*v >= 0.0)) {
            return Err(Error::Schema("group learning-rate multipliers must be non-negative".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base: self.lr,
            total_steps: self.steps,
            halvings: self.lr_halvings,
        }
    }

    pub fn policy(&self) -> ExecPolicy {
        ExecPolicy {
            parallel: self.parallel,
            deterministic: self.deterministic,
        }
    }
}

/// An observed image and its camera.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: CameraModel,
    pub image: Image,
}

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub loss: LossBreakdown,
    pub psnr_holdout: Option<f64>,
    pub lr: f64,
}

pub const METRICS_HEADER: &str = "step,rgb,white,spec,eikonal,residual,total,psnr_holdout,lr";

impl MetricsRow {
    pub fn csv(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{},{:e}",
            self.step,
            l.rgb,
            l.white,
            l.spec,
            l.eikonal,
            l.residual,
            l.total,
            self.psnr_holdout.map(|p| format!("{p:.6}")).unwrap_or_default(),
            self.lr
        )
    }
}

pub fn write_metrics_log<W: Write>(mut w: W, rows: &[MetricsRow]) -> Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv())?;
    }
    Ok(())
}

/// Holdout quality after per-view least-squares calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutEval {
    pub psnr: f64,
    pub ssim: f64,
    pub renders: Vec<Image>,
    pub maps: Vec<CalibrationMap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointMeta {
    step: usize,
    adam_t: u64,
    params: usize,
    entries: Vec<String>,
}

struct Batch {
    rays: Vec<Ray>,
    images: Vec<usize>,
    observed: Vec<[f64; 3]>,
}

/// Owns the model and optimizer state for a fit.
pub struct Trainer {
    pub model: Model,
    pub calibration: Option<CalibrationNet>,
    pub adam: AdamState,
    pub step: usize,
    pub config: FitConfig,
    pub train: Vec<View>,
    pub holdout: Vec<View>,
    pub log: Vec<MetricsRow>,
    pub forward: ForwardOptions,
    /// Most recent holdout evaluation made by [`Trainer::run`].
    pub last_eval: Option<HoldoutEval>,
}

impl Trainer {
    /// Registers the learnable light, β and calibration network as
    /// configured and applies the group multipliers.
    pub fn new(mut model: Model, config: FitConfig, train: Vec<View>, holdout: Vec<View>) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::invalid("fitting needs at least one training view"));
        }
        for v in train.iter().chain(&holdout) {
            v.camera.validate()?;
            if v.image.width() != v.camera.width || v.image.height() != v.camera.height {
                return Err(Error::invalid("image size does not match its camera"));
            }
        }
        if config.learn_light {
            if let LightSource::Fixed(l) = &model.light {
                let l = l.clone();
                model.make_light_learnable(&l);
            }
        }
        if config.learn_beta {
            if let BetaSource::Fixed(_) = model.beta {
                model.make_beta_learnable(config.initial_beta);
            }
        }
        let calibration = config.calibration.then(|| {
            let mut rng = stream(derive_seed(config.seed, TAG_CALIBRATION), 0);
            CalibrationNet::register(&mut model.tape, train.len(), &mut rng)
        });
        for (g, m) in &config.group_lr {
            model.tape.set_group_lr(g, *m);
        }
        let adam = AdamState::new(model.tape.len());
        Ok(Trainer {
            model,
            calibration,
            adam,
            step: 0,
            config,
            train,
            holdout,
            log: Vec::new(),
            forward: ForwardOptions::default(),
            last_eval: None,
        })
    }

    pub fn param_count(&self) -> usize {
        self.model.tape.len()
    }

    fn batch(&self, step: usize) -> Batch {
        let s = if self.config.fixed_batch { 0 } else { step };
        let mut rng = stream(derive_seed(self.config.seed, TAG_RAYS), s as u64);
        let n = self.config.batch_rays;
        let mut b = Batch {
            rays: Vec::with_capacity(n),
            images: Vec::with_capacity(n),
            observed: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let i = rng.random_range(0..self.train.len());
            let v = &self.train[i];
            let px = rng.random_range(0..v.camera.pixel_count());
            b.rays.push(v.camera.ray_index(px));
            b.images.push(i);
            b.observed.push(v.image.pixels()[px]);
        }
        b
    }

    /// Loss and gradient for `step`'s batch at the current parameters.
    pub fn loss_and_gradient(&self, step: usize) -> Result<(LossBreakdown, Vec<f64>)> {
        let batch = self.batch(step);
        let n = batch.rays.len();
        let chunks = chunk_count(n, FIT_CHUNK);
        let w = self.config.weights;
        let model = &self.model;
        let results = self.config.policy().map(chunks + 1, |c| -> Result<(LossBreakdown, Vec<f64>)> {
            let mut g = Graph::new(&model.tape);
            if c == chunks {
                return Ok(self.regularizers(&mut g, step, &w));
            }
            let range = c * FIT_CHUNK..((c + 1) * FIT_CHUNK).min(n);
            let frac = range.len() as f64 / n as f64;
            let out = model.forward(&mut g, &batch.rays[range.clone()], &self.forward)?;
            let rgb = match &self.calibration {
                Some(net) => net.apply(&mut g, out.rgb, &batch.images[range.clone()]),
                None => out.rgb,
            };
            let obs = Array2::from_shape_fn((range.len(), 3), |(i, k)| batch.observed[range.start + i][k]);
            let loss = loss_total(
                &mut g,
                LossInputs {
                    rendered: Some((rgb, obs)),
                    specular: Some(out.specular),
                    ..Default::default()
                },
                &w,
            );
            let scaled = g.scale(loss.total, frac);
            let grads = g.backward(scaled).params;
            let mut b = LossBreakdown::default();
            b.accumulate(&loss.breakdown, frac);
            Ok((b, grads))
        });
        let mut total = LossBreakdown::default();
        let mut grads = vec![0.0; model.tape.len()];
        for r in results {
            let (b, gr) = r?;
            total.accumulate(&b, 1.0);
            for (a, v) in grads.iter_mut().zip(gr) {
                *a += v;
            }
        }
        Ok((total, grads))
    }

    fn regularizers(&self, g: &mut Graph, step: usize, w: &LossWeights) -> (LossBreakdown, Vec<f64>) {
        let model = &self.model;
        let s = if self.config.fixed_batch { 0 } else { step };
        let mut rng = stream(derive_seed(self.config.seed, TAG_OMEGA), s as u64);
        let xs = model.sdf.bounds.sample(&mut rng, self.config.geometry_samples);
        let sdf = model.sdf.eval_graph(g, &xs);
        let light = model.light_var(g);
        let loss = loss_total(
            g,
            LossInputs {
                light: Some(light),
                sdf_gradient: Some(sdf.gradient),
                displacement: Some(sdf.displacement),
                ..Default::default()
            },
            w,
        );
        let grads = g.backward(loss.total).params;
        (loss.breakdown, grads)
    }

    /// One optimizer step. On a non-finite loss or gradient the parameters
    /// are left at their last good values and `Diverged` is returned.
    pub fn step(&mut self) -> Result<LossBreakdown> {
        let lr = self.config.schedule().lr_at(self.step);
        let (loss, grads) = self.loss_and_gradient(self.step)?;
        if !loss.total.is_finite() {
            return Err(Error::Diverged { step: self.step });
        }
        if let Err(e) = self.model.tape.set_grads(grads) {
            return match e {
                Error::NonFiniteGradient { .. } => Err(Error::Diverged { step: self.step }),
                e => Err(e),
            };
        }
        adam_step(&mut self.model.tape, &mut self.adam, lr, &self.config.adam);
        if self.model.tape.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step: self.step });
        }
        self.step += 1;
        Ok(loss)
    }

    /// Runs until the configured step count, logging every step and
    /// evaluating the holdout views on schedule and at the end. `on_row`
    /// sees the trainer after each step; an error from it stops the run.
    pub fn run(&mut self, mut on_row: impl FnMut(&Trainer, &MetricsRow) -> Result<()>) -> Result<()> {
        while self.step < self.config.steps {
            let lr = self.config.schedule().lr_at(self.step);
            let snapshot = (self.model.tape.values().to_vec(), self.adam.clone());
            let loss = match self.step() {
                Ok(l) => l,
                Err(e @ Error::Diverged { .. }) => {
                    self.model.tape.set_values(&snapshot.0)?;
                    self.adam = snapshot.1;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            let done = self.step == self.config.steps;
            let due = self.config.eval_every > 0 && self.step.is_multiple_of(self.config.eval_every);
            let psnr_holdout = if (done || due) && !self.holdout.is_empty() {
                let e = self.evaluate_holdout()?;
                let p = e.psnr;
                self.last_eval = Some(e);
                Some(p)
            } else {
                None
            };
            let row = MetricsRow {
                step: self.step,
                loss,
                psnr_holdout,
                lr,
            };
            self.log.push(row);
            on_row(self, &row)?;
        }
        Ok(())
    }

    /// Renders every holdout view, calibrates it by least squares and
    /// averages PSNR and SSIM.
    pub fn evaluate_holdout(&self) -> Result<HoldoutEval> {
        evaluate_views(&self.model, &self.holdout, self.config.policy(), &self.forward)
    }

    /// Training-time calibration map of view `i` (identity without a network).
    pub fn calibration_map(&self, i: usize) -> CalibrationMap {
        match &self.calibration {
            Some(net) => net.map(&self.model.tape, i),
            None => CalibrationMap::identity(),
        }
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut values = self.model.tape.values().to_vec();
        values.extend(&self.adam.m);
        values.extend(&self.adam.v);
        let meta = CheckpointMeta {
            step: self.step,
            adam_t: self.adam.t,
            params: self.model.tape.len(),
            entries: self.model.tape.entries().iter().map(|e| e.name.clone()).collect(),
        };
        write_blob(path, &values, &meta)
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let (values, meta): (Vec<f64>, CheckpointMeta) = read_blob(path)?;
        let names: Vec<String> = self.model.tape.entries().iter().map(|e| e.name.clone()).collect();
        let n = self.model.tape.len();
        if meta.params != n || meta.entries != names || values.len() != 3 * n {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: "checkpoint layout does not match the model".into(),
            });
        }
        self.model.tape.set_values(&values[..n])?;
        self.adam = AdamState {
            m: values[n..2 * n].to_vec(),
            v: values[2 * n..].to_vec(),
            t: meta.adam_t,
        };
        self.step = meta.step;
        Ok(())
    }
}

/// Holdout evaluation shared by the trainer and the CLI.
pub fn evaluate_views(model: &Model, views: &[View], policy: ExecPolicy, forward: &ForwardOptions) -> Result<HoldoutEval> {
    let opts = RenderOptions {
        forward: *forward,
        policy,
    };
    let mut renders = Vec::new();
    let mut maps = Vec::new();
    let (mut p, mut s) = (0.0, 0.0);
    for v in views {
        let img = render_image(model, &v.camera, &opts)?.image;
        let fit = calibrate_images(&img, &v.image)?;
        let cal = fit.map.apply_image(&img);
        p += psnr(&cal, &v.image)?;
        s += ssim(&cal, &v.image)?;
        renders.push(cal);
        maps.push(fit.map);
    }
    let n = views.len().max(1) as f64;
    Ok(HoldoutEval {
        psnr: p / n,
        ssim: s / n,
        renders,
        maps,
    })
}

/// Final report of a fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub report: MetricsReport,
    pub log: Vec<MetricsRow>,
}

/// Runs a full fit and reports holdout quality.
pub fn fit_scene(trainer: &mut Trainer, on_row: impl FnMut(&Trainer, &MetricsRow) -> Result<()>) -> Result<FitResult> {
    trainer.run(on_row)?;
    let report = match (&trainer.last_eval, trainer.holdout.is_empty()) {
        (_, true) => MetricsReport {
            psnr: f64::NAN,
            ssim: f64::NAN,
            geom_err: None,
        },
        (Some(e), false) if trainer.log.last().is_some_and(|r| r.psnr_holdout.is_some()) => MetricsReport {
            psnr: e.psnr,
            ssim: e.ssim,
            geom_err: None,
        },
        _ => {
            let e = trainer.evaluate_holdout()?;
            MetricsReport {
                psnr: e.psnr,
                ssim: e.ssim,
                geom_err: None,
            }
        }
    };
    Ok(FitResult {
        report,
        log: trainer.log.clone(),
    })
}
