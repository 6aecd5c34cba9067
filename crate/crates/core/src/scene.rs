//! Scene files, fit jobs and model construction.
//!
//! A scene is a versioned JSON document. Relative paths inside it (light,
//! images, weights) resolve against the directory holding the file. Nested
//! objects always reject unknown keys; unknown top-level keys are rejected
//! only in strict mode.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::exec::ExecPolicy;
use crate::geometry::{BoundingSphere, Displacement, PriorShape, SdfField};
use crate::io::{read_blob, read_pfm, write_blob, Image};
use crate::material::{
    AnalyticField, BasisNetworkSpec, BasisTables, IntegratedBasis, MaterialField, MaterialSample, SpatialField,
    SpatialFieldSpec,
};
use crate::math::{fibonacci_sphere, Direction, Vec3};
use crate::metrics::{albedo_error, geometry_probe, AlbedoError, GeometryProbe, PROBE_DIRECTIONS};
use crate::nn::{Activation, Init, Mlp, MlpSpec};
use crate::optim::{FitConfig, View};
use crate::oracle::{oracle_image, AnalyticBrdf};
use crate::render::{orbit, sphere_trace_batch, CameraModel, Model, Ray};
use crate::rng::stream;
use crate::sh::SHLight;
use crate::tape::ParamTape;
use crate::{Error, Result};

pub const SCENE_VERSION: u32 = 1;

const TAG_DISPLACEMENT: u64 = 10;
const TAG_MATERIAL: u64 = 11;
const TAG_BASIS: u64 = 12;

fn default_beta() -> f64 {
    crate::render::DEFAULT_BETA
}

fn default_softplus() -> f64 {
    10.0
}

fn default_omega0() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    pub prior: PriorShape,
    #[serde(default)]
    pub displacement: DisplacementSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisplacementSpec {
    #[default]
    None,
    Constant {
        value: f64,
    },
    /// MLP on the frequency encoding with a zero-initialized output layer.
    Network {
        hidden: Vec<usize>,
        #[serde(default = "default_softplus")]
        softplus_beta: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaterialSpec {
    Analytic {
        field: AnalyticField,
    },
    Network {
        hidden: Vec<usize>,
        #[serde(default = "default_omega0")]
        omega0: f64,
        init: MaterialSample,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisSpec {
    /// Tabulated integrals of closed-form lobes.
    Table {
        bases: Vec<AnalyticBrdf>,
        #[serde(default)]
        seed: u64,
    },
    Network {
        hidden: Vec<usize>,
        basis_count: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LightRef {
    Inline(SHLight),
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Holdout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraEntry {
    pub id: String,
    pub split: Split,
    pub camera: CameraModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
}

/// Ring of cameras looking at `target`; expands to ids `<prefix>NN`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitSpec {
    pub prefix: String,
    pub split: Split,
    #[serde(default)]
    pub target: [f64; 3],
    pub distance: f64,
    pub count: usize,
    #[serde(default)]
    pub elevation_deg: f64,
    #[serde(default)]
    pub phase_deg: f64,
    pub resolution: usize,
    pub fov_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub version: u32,
    pub bounds: BoundingSphere,
    pub geometry: GeometrySpec,
    pub material: MaterialSpec,
    pub basis: BasisSpec,
    pub light: LightRef,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cameras: Vec<CameraEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub orbits: Vec<OrbitSpec>,
    /// Weight blob for the network fields.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(flatten, skip_serializing)]
    pub unknown: BTreeMap<String, Value>,
}

/// A scene file together with the directory its paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub file: SceneFile,
    pub base: PathBuf,
}

/// Expanded camera with its resolved image path.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneCamera {
    pub id: String,
    pub split: Split,
    pub camera: CameraModel,
    pub image: Option<PathBuf>,
}

/// Named parameter block in a weight blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightEntry {
    pub name: String,
    pub group: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

fn schema(msg: impl Into<String>) -> Error {
    Error::Schema(msg.into())
}

impl Scene {
    pub fn load(path: &Path, strict: bool) -> Result<Scene> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Scene::from_json(&text, base, strict)
    }

    pub fn from_json(text: &str, base: PathBuf, strict: bool) -> Result<Scene> {
        let file: SceneFile = serde_json::from_str(text).map_err(|e| schema(e.to_string()))?;
        if strict && !file.unknown.is_empty() {
            let keys: Vec<&str> = file.unknown.keys().map(String::as_str).collect();
            return Err(schema(format!("unknown keys: {}", keys.join(", "))));
        }
        let scene = Scene { file, base };
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.file)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = &self.file;
        if f.version != SCENE_VERSION {
            return Err(schema(format!("unsupported scene version {}", f.version)));
        }
        if !(f.bounds.radius > 0.0) {
            return Err(schema("bounds radius must be positive"));
        }
        f.geometry.prior.shape.validate()?;
        if !(f.beta > 0.0) {
            return Err(schema("beta must be positive"));
        }
        if let DisplacementSpec::Network { softplus_beta, .. } = f.geometry.displacement {
            if !(softplus_beta > 0.0) {
                return Err(schema("softplus_beta must be positive"));
            }
        }
        let k = self.basis_count();
        if k == 0 {
            return Err(schema("the basis needs at least one function"));
        }
        let material_k = match &f.material {
            MaterialSpec::Analytic { field } => {
                field.validate()?;
                field.basis_count()
            }
            MaterialSpec::Network { init, .. } => {
                init.validate()?;
                init.coeffs.len()
            }
        };
        if material_k != k {
            return Err(schema(format!("material has {material_k} basis weights but the basis has {k}")));
        }
        let mut ids = std::collections::BTreeSet::new();
        for c in self.cameras()? {
            c.camera.validate()?;
            if !ids.insert(c.id.clone()) {
                return Err(schema(format!("duplicate camera id `{}`", c.id)));
            }
        }
        Ok(())
    }

    pub fn basis_count(&self) -> usize {
        match &self.file.basis {
            BasisSpec::Table { bases, .. } => bases.len(),
            BasisSpec::Network { basis_count, .. } => *basis_count,
        }
    }

    pub fn light(&self) -> Result<SHLight> {
        match &self.file.light {
            LightRef::Inline(l) => Ok(l.clone()),
            LightRef::File { path } => load_light(&self.resolve(path)),
        }
    }

    /// Explicit cameras followed by expanded orbits.
    pub fn cameras(&self) -> Result<Vec<SceneCamera>> {
        let mut out: Vec<SceneCamera> = self
            .file
            .cameras
            .iter()
            .map(|c| SceneCamera {
                id: c.id.clone(),
                split: c.split,
                camera: c.camera.clone(),
                image: c.image.as_ref().map(|p| self.resolve(p)),
            })
            .collect();
        for o in &self.file.orbits {
            let cams = orbit(
                Vec3::from(o.target),
                o.distance,
                o.count,
                o.elevation_deg,
                o.phase_deg,
                o.resolution,
                o.fov_deg,
            )?;
            out.extend(cams.into_iter().enumerate().map(|(i, camera)| SceneCamera {
                id: format!("{}{:02}", o.prefix, i),
                split: o.split,
                camera,
                image: None,
            }));
        }
        Ok(out)
    }

    pub fn split_cameras(&self, split: Split) -> Result<Vec<SceneCamera>> {
        Ok(self.cameras()?.into_iter().filter(|c| c.split == split).collect())
    }

    /// Registers networks in a fixed order, loads weights by name and
    /// assembles the differentiable model.
    pub fn build_model(&self) -> Result<Model> {
        let f = &self.file;
        let mut tape = ParamTape::new();
        let displacement = match &f.geometry.displacement {
            DisplacementSpec::None => Displacement::None,
            DisplacementSpec::Constant { value } => Displacement::Constant(*value),
            DisplacementSpec::Network { hidden, softplus_beta } => {
                let mut sizes = vec![SdfField::encoding_width()];
                sizes.extend(hidden);
                sizes.push(1);
                let spec = MlpSpec {
                    sizes,
                    activation: Activation::Softplus { beta: *softplus_beta },
                    init: Init::Xavier,
                    zero_last: true,
                };
                let mut rng = stream(f.seed, TAG_DISPLACEMENT);
                Displacement::Network(Mlp::register(&mut tape, "displacement", "geometry", spec, &mut rng))
            }
        };
        let material = match &f.material {
            MaterialSpec::Analytic { field } => MaterialField::Analytic(field.clone()),
            MaterialSpec::Network { hidden, omega0, init } => {
                let spec = SpatialFieldSpec {
                    hidden: hidden.clone(),
                    omega0: *omega0,
                    basis_count: init.coeffs.len(),
                    init: init.clone(),
                };
                let mut rng = stream(f.seed, TAG_MATERIAL);
                MaterialField::Network(SpatialField::register(&mut tape, spec, &mut rng)?)
            }
        };
        let basis = match &f.basis {
            BasisSpec::Table { bases, seed } => IntegratedBasis::Table(BasisTables::build(bases.clone(), *seed)?),
            BasisSpec::Network { hidden, basis_count } => {
                let spec = BasisNetworkSpec {
                    hidden: hidden.clone(),
                    basis_count: *basis_count,
                };
                let mut rng = stream(f.seed, TAG_BASIS);
                IntegratedBasis::register_network(&mut tape, spec, &mut rng)
            }
        };
        if let Some(w) = &f.weights {
            load_weights(&mut tape, &self.resolve(w))?;
        }
        let sdf = SdfField::new(f.geometry.prior.clone(), f.bounds, displacement);
        let mut model = Model::new(sdf, material, basis, self.light()?);
        model.tape = tape;
        model.beta = crate::render::BetaSource::Fixed(f.beta);
        Ok(model)
    }

    /// Closed-form BRDF at each point, for scenes whose material is analytic
    /// and whose basis is tabulated from closed-form lobes.
    pub fn analytic_brdf(&self) -> Result<impl Fn(&Vec3) -> AnalyticBrdf + Sync + '_> {
        let (field, bases) = match (&self.file.material, &self.file.basis) {
            (MaterialSpec::Analytic { field }, BasisSpec::Table { bases, .. }) => (field, bases),
            _ => return Err(schema("ground truth needs an analytic material and a table basis")),
        };
        let bounds = self.file.bounds;
        Ok(move |x: &Vec3| {
            let m = field.eval(&bounds, x);
            AnalyticBrdf::LowRank {
                albedo: m.albedo,
                rho: m.rho,
                coeffs: m.coeffs,
                bases: bases.clone(),
            }
        })
    }

    /// Views whose images are read from disk (PFM).
    pub fn image_views(&self, split: Split) -> Result<Vec<View>> {
        self.split_cameras(split)?
            .into_iter()
            .map(|c| {
                let path = c.image.ok_or_else(|| schema(format!("camera `{}` has no image", c.id)))?;
                let image = read_pfm(&path)?;
                if image.width() != c.camera.width || image.height() != c.camera.height {
                    return Err(Error::Format {
                        path,
                        msg: "image size differs from the camera".into(),
                    });
                }
                Ok(View { camera: c.camera, image })
            })
            .collect()
    }

    /// Views rendered by the Monte-Carlo oracle.
    pub fn oracle_views(&self, split: Split, spp: usize, seed: u64, policy: ExecPolicy) -> Result<Vec<View>> {
        let brdf = self.analytic_brdf()?;
        let sdf = SdfField::new(self.file.geometry.prior.clone(), self.file.bounds, Displacement::None);
        if !matches!(self.file.geometry.displacement, DisplacementSpec::None) {
            return Err(schema("ground truth geometry must not have a displacement"));
        }
        let light = self.light()?;
        self.split_cameras(split)?
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                let s = crate::rng::derive_seed(seed, ((split as u64) << 32) | i as u64);
                let image = oracle_image(&sdf, &[], &c.camera, &brdf, &light, spp, s, policy)?;
                Ok(View { camera: c.camera, image })
            })
            .collect()
    }
}

pub fn load_light(path: &Path) -> Result<SHLight> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn save_light(path: &Path, light: &SHLight) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(light)? + "\n")?;
    Ok(())
}

/// Writes the named entries of `tape` (all when `names` is `None`).
pub fn save_weights(path: &Path, tape: &ParamTape, names: Option<&[&str]>) -> Result<()> {
    let mut values = Vec::new();
    let mut meta = Vec::new();
    for e in tape.entries() {
        if names.is_some_and(|n| !n.contains(&e.name.as_str())) {
            continue;
        }
        meta.push(WeightEntry {
            name: e.name.clone(),
            group: e.group.clone(),
            rows: e.handle.rows,
            cols: e.handle.cols,
            offset: values.len(),
        });
        values.extend_from_slice(tape.slice(e.handle));
    }
    write_blob(path, &values, &meta)
}

/// Copies every tape entry from the blob by name; all must be present with
/// matching shapes.
pub fn load_weights(tape: &mut ParamTape, path: &Path) -> Result<()> {
    let (values, meta): (Vec<f64>, Vec<WeightEntry>) = read_blob(path)?;
    let by_name: BTreeMap<&str, &WeightEntry> = meta.iter().map(|w| (w.name.as_str(), w)).collect();
    let fmt = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let entries: Vec<_> = tape.entries().to_vec();
    for e in entries {
        let w = by_name.get(e.name.as_str()).ok_or_else(|| fmt(format!("missing weights for `{}`", e.name)))?;
        if (w.rows, w.cols) != (e.handle.rows, e.handle.cols) || w.offset + w.rows * w.cols > values.len() {
            return Err(fmt(format!("shape mismatch for `{}`", e.name)));
        }
        tape.slice_mut(e.handle).copy_from_slice(&values[w.offset..w.offset + w.rows * w.cols]);
    }
    Ok(())
}

/// Writes `model` as a self-contained scene at `dir/<name>.json` with its
/// weights in `dir/<name>.weights`. Learned light and β become fixed values;
/// cameras are carried over from `template`.
pub fn export_scene(template: &Scene, model: &Model, dir: &Path, name: &str) -> Result<Scene> {
    fs::create_dir_all(dir)?;
    let mut file = template.file.clone();
    file.light = LightRef::Inline(model.light());
    file.beta = model.beta();
    file.unknown.clear();
    for c in &mut file.cameras {
        if let Some(img) = &c.image {
            let abs = template.resolve(img);
            c.image = Some(std::path::absolute(&abs).unwrap_or(abs));
        }
    }
    let field_names: Vec<&str> = model
        .tape
        .entries()
        .iter()
        .filter(|e| ["geometry", "material", "basis"].contains(&e.group.as_str()))
        .map(|e| e.name.as_str())
        .collect();
    file.weights = if field_names.is_empty() {
        None
    } else {
        let w = format!("{name}.weights");
        save_weights(&dir.join(&w), &model.tape, Some(&field_names))?;
        Some(PathBuf::from(w))
    };
    let scene = Scene {
        file,
        base: dir.to_path_buf(),
    };
    scene.save(&dir.join(format!("{name}.json")))?;
    Ok(scene)
}

/// Recovered-versus-truth errors of a fitted model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryErrors {
    pub geometry: GeometryProbe,
    pub albedo: AlbedoError,
}

/// Compares `model` against an analytic ground-truth scene: the SDF probe
/// for geometry, and albedo at points traced on the true surface from the
/// probe directions.
pub fn recovery_errors(model: &Model, truth: &Scene) -> Result<RecoveryErrors> {
    let field = match &truth.file.material {
        MaterialSpec::Analytic { field } => field,
        MaterialSpec::Network { .. } => return Err(schema("ground truth needs an analytic material")),
    };
    let bounds = truth.file.bounds;
    let truth_sdf = SdfField::new(truth.file.geometry.prior.clone(), bounds, Displacement::None);
    let geometry = geometry_probe(&model.sdf, model.params(), &truth_sdf, &[], PROBE_DIRECTIONS);
    let c = bounds.center();
    let rays: Vec<Ray> = fibonacci_sphere(PROBE_DIRECTIONS)
        .into_iter()
        .filter_map(|d| {
            Some(Ray {
                origin: c + d * (1.5 * bounds.radius),
                dir: Direction::normalize(-d).ok()?,
            })
        })
        .collect();
    let points: Vec<Vec3> = sphere_trace_batch(&truth_sdf, &[], &rays)
        .iter()
        .zip(&rays)
        .filter_map(|(tr, ray)| tr.hit_t().map(|t| ray.at(t)))
        .collect();
    let mut recovered = Vec::with_capacity(points.len());
    for x in &points {
        recovered.push(model.material.eval(model.params(), &model.sdf.bounds, x)?.albedo);
    }
    let expected: Vec<[f64; 3]> = points.iter().map(|x| field.eval(&bounds, x).albedo).collect();
    Ok(RecoveryErrors {
        geometry,
        albedo: albedo_error(&recovered, &expected)?,
    })
}

/// Where the training images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// PFM images referenced by the model scene's cameras.
    Images,
    /// Render the cameras of an analytic ground-truth scene with the
    /// Monte-Carlo oracle.
    Oracle {
        truth: PathBuf,
        spp: usize,
        #[serde(default)]
        seed: u64,
    },
}

/// Fit job: initial scene, data and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitJob {
    pub scene: PathBuf,
    pub data: DataSource,
    #[serde(default)]
    pub fit: FitConfig,
}

/// A fit job with everything loaded.
pub struct PreparedFit {
    pub scene: Scene,
    pub truth: Option<Scene>,
    pub train: Vec<View>,
    pub holdout: Vec<View>,
    pub config: FitConfig,
}

impl FitJob {
    pub fn load(path: &Path) -> Result<(FitJob, PathBuf)> {
        let text = fs::read_to_string(path)?;
        let job: FitJob = serde_json::from_str(&text).map_err(|e| schema(e.to_string()))?;
        job.fit.validate()?;
        Ok((job, path.parent().map(Path::to_path_buf).unwrap_or_default()))
    }

    fn resolve(base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    /// Loads scenes and images. Ground-truth rendering honors `policy`.
    pub fn prepare(&self, base: &Path, policy: ExecPolicy) -> Result<PreparedFit> {
        self.assemble(base, Some(policy))
    }

    /// Loads and checks the scenes without reading or rendering images; the
    /// views carry black images of the right size.
    pub fn prepare_layout(&self, base: &Path) -> Result<PreparedFit> {
        self.assemble(base, None)
    }

    fn assemble(&self, base: &Path, render: Option<ExecPolicy>) -> Result<PreparedFit> {
        self.fit.validate()?;
        let scene = Scene::load(&Self::resolve(base, &self.scene), true)?;
        let blank = |s: &Scene, split: Split| -> Result<Vec<View>> {
            Ok(s.split_cameras(split)?
                .into_iter()
                .map(|c| View {
                    image: Image::new(c.camera.width, c.camera.height),
                    camera: c.camera,
                })
                .collect())
        };
        let (truth, train, holdout) = match (&self.data, render) {
            (DataSource::Images, Some(_)) => (None, scene.image_views(Split::Train)?, scene.image_views(Split::Holdout)?),
            (DataSource::Images, None) => (None, blank(&scene, Split::Train)?, blank(&scene, Split::Holdout)?),
            (DataSource::Oracle { truth, spp, seed }, render) => {
                if *spp == 0 {
                    return Err(schema("spp must be positive"));
                }
                let t = Scene::load(&Self::resolve(base, truth), true)?;
                let (train, holdout) = match render {
                    Some(policy) => (
                        t.oracle_views(Split::Train, *spp, *seed, policy)?,
                        t.oracle_views(Split::Holdout, *spp, *seed, policy)?,
                    ),
                    None => (blank(&t, Split::Train)?, blank(&t, Split::Holdout)?),
                };
                (Some(t), train, holdout)
            }
        };
        if train.is_empty() {
            return Err(schema("the fit job has no training views"));
        }
        Ok(PreparedFit {
            scene,
            truth,
            train,
            holdout,
            config: self.fit.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPHERE: &str = r#"{
        "version": 1,
        "bounds": {"center": [0, 0, 0], "radius": 150},
        "geometry": {"prior": {"shape": {"kind": "sphere", "center": [0, 0, 0], "radius": 100}}},
        "material": {"kind": "analytic", "field": {"kind": "constant",
            "sample": {"albedo": [0.6, 0.5, 0.4], "rho": 0.1, "kappa": 40, "coeffs": [0.6, 0.4]}}},
        "basis": {"kind": "table", "bases": [{"kind": "vmf_lobe", "kappa": 32}, {"kind": "vmf_lobe", "kappa": 48}]},
        "light": {"l_max": 0, "coeffs": [[2.0], [2.0], [2.0]]},
        "orbits": [{"prefix": "train_", "split": "train", "distance": 350, "count": 3,
                    "resolution": 16, "fov_deg": 40}]
    }"#;

    #[test]
    fn parses_and_expands_orbits() {
        let s = Scene::from_json(SPHERE, PathBuf::new(), true).unwrap();
        let cams = s.cameras().unwrap();
        assert_eq!(cams.len(), 3);
        assert_eq!(cams[2].id, "train_02");
        assert!(s.split_cameras(Split::Holdout).unwrap().is_empty());
        let m = s.build_model().unwrap();
        assert!(m.tape.is_empty());
    }

    #[test]
    fn strict_mode_rejects_unknown_top_level_keys() {
        let text = SPHERE.replacen("\"version\": 1,", "\"version\": 1, \"colour\": 3,", 1);
        assert!(matches!(Scene::from_json(&text, PathBuf::new(), true), Err(Error::Schema(_))));
        assert!(Scene::from_json(&text, PathBuf::new(), false).is_ok());
    }

    #[test]
    fn nested_unknown_keys_are_always_rejected() {
        let text = SPHERE.replacen("\"radius\": 150", "\"radius\": 150, \"r\": 1", 1);
        assert!(Scene::from_json(&text, PathBuf::new(), false).is_err());
    }

    #[test]
    fn basis_count_mismatch_is_a_schema_error() {
        let text = SPHERE.replacen("\"coeffs\": [0.6, 0.4]", "\"coeffs\": [0.6]", 1);
        assert!(matches!(Scene::from_json(&text, PathBuf::new(), true), Err(Error::Schema(_))));
    }

    #[test]
    fn save_load_is_a_fixed_point() {
        let dir = tempfile::tempdir().unwrap();
        let s = Scene::from_json(SPHERE, dir.path().to_path_buf(), true).unwrap();
        let p = dir.path().join("a.json");
        s.save(&p).unwrap();
        let a = Scene::load(&p, true).unwrap();
        a.save(&p).unwrap();
        let b = Scene::load(&p, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.file, s.file);
    }

    #[test]
    fn network_weights_roundtrip_through_export() {
        let dir = tempfile::tempdir().unwrap();
        let text = SPHERE
            .replacen(
                "\"geometry\": {\"prior\": {\"shape\": {\"kind\": \"sphere\", \"center\": [0, 0, 0], \"radius\": 100}}}",
                "\"geometry\": {\"prior\": {\"shape\": {\"kind\": \"sphere\", \"center\": [0, 0, 0], \"radius\": 100}}, \"displacement\": {\"kind\": \"network\", \"hidden\": [8]}}",
                1,
            )
            .replacen(
                "\"material\": {\"kind\": \"analytic\", \"field\": {\"kind\": \"constant\",\n            \"sample\": {\"albedo\": [0.6, 0.5, 0.4], \"rho\": 0.1, \"kappa\": 40, \"coeffs\": [0.6, 0.4]}}}",
                "\"material\": {\"kind\": \"network\", \"hidden\": [8], \"init\": {\"albedo\": [0.6, 0.5, 0.4], \"rho\": 0.1, \"kappa\": 40, \"coeffs\": [0.6, 0.4]}}",
                1,
            );
        let s = Scene::from_json(&text, dir.path().to_path_buf(), true).unwrap();
        let mut m = s.build_model().unwrap();
        assert!(!m.tape.is_empty());
        for (i, v) in m.tape.values_mut().iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin();
        }
        let out = export_scene(&s, &m, &dir.path().join("out"), "fitted").unwrap();
        let back = Scene::load(&dir.path().join("out/fitted.json"), true).unwrap();
        assert_eq!(back.file, out.file);
        let m2 = back.build_model().unwrap();
        assert_eq!(m2.tape.values(), m.tape.values());
    }
}
