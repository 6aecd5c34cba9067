//! Per-image linear color maps: least squares at test time, a small
//! embedding-conditioned network during training.

use nalgebra::{Matrix3, SymmetricEigen};
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::io::Image;
use crate::nn::{Activation, Init, Mlp, MlpSpec};
use crate::rng::StreamRng;
use crate::sh::Rgb;
use crate::tape::{Graph, ParamHandle, ParamTape, Var};
use crate::{Error, Result};

pub const CALIBRATION_RIDGE: f64 = 1e-8;
pub const EMBEDDING_DIM: usize = 8;
pub const CALIBRATION_HIDDEN: [usize; 2] = [32, 32];

/// `rgb ↦ A·rgb`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    pub matrix: [[f64; 3]; 3],
}

impl Default for CalibrationMap {
    fn default() -> Self {
        Self::identity()
    }
}

impl CalibrationMap {
    pub fn identity() -> Self {
        Self::diagonal([1.0; 3])
    }

    pub fn diagonal(d: [f64; 3]) -> Self {
        let mut matrix = [[0.0; 3]; 3];
        for i in 0..3 {
            matrix[i][i] = d[i];
        }
        CalibrationMap { matrix }
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let mut matrix = [[0.0; 3]; 3];
        for (i, row) in matrix.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[(i, j)];
            }
        }
        CalibrationMap { matrix }
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.matrix[i][j])
    }

    pub fn is_finite(&self) -> bool {
        self.matrix.iter().flatten().all(|v| v.is_finite())
    }

    pub fn apply(&self, rgb: Rgb) -> Rgb {
        let m = &self.matrix;
        [0, 1, 2].map(|r| m[r][0] * rgb[0] + m[r][1] * rgb[1] + m[r][2] * rgb[2])
    }

    pub fn apply_image(&self, img: &Image) -> Image {
        img.map(|p| self.apply(p))
    }

    pub fn compose(&self, other: &CalibrationMap) -> CalibrationMap {
        Self::from_matrix(&(self.to_matrix() * other.to_matrix()))
    }
}

/// Result of a least-squares calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationFit {
    pub map: CalibrationMap,
    /// Numerical rank of the rendered pixel matrix.
    pub rank: usize,
    /// Whether the ridge fallback was used.
    pub ridge: bool,
    /// `Σ ‖A·r − o‖²`.
    pub residual: f64,
}

/// Sum of squared residuals of `map` on the pixel pairs.
pub fn calibration_residual(map: &CalibrationMap, rendered: &[Rgb], observed: &[Rgb]) -> f64 {
    rendered
        .iter()
        .zip(observed)
        .map(|(r, o)| {
            let a = map.apply(*r);
            (0..3).map(|c| (a[c] - o[c]).powi(2)).sum::<f64>()
        })
        .sum()
}

/// Least-squares `A` minimizing `Σ ‖A·r_i − o_i‖²`, i.e.
/// `A = (Σ o rᵀ)(Σ r rᵀ)⁻¹`.
///
/// When `Σ r rᵀ` is numerically rank deficient a ridge of
/// [`CALIBRATION_RIDGE`] is added and `ridge` is set.
pub fn calibrate_solve(rendered: &[Rgb], observed: &[Rgb]) -> Result<CalibrationFit> {
    if rendered.len() != observed.len() {
        return Err(Error::DimensionMismatch {
            expected: rendered.len(),
            got: observed.len(),
        });
    }
    let mut rr = Matrix3::<f64>::zeros();
    let mut or = Matrix3::<f64>::zeros();
    for (r, o) in rendered.iter().zip(observed) {
        for i in 0..3 {
            for j in 0..3 {
                rr[(i, j)] += r[i] * r[j];
                or[(i, j)] += o[i] * r[j];
            }
        }
    }
    let eig = SymmetricEigen::new(rr);
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let tol = top * 1e-12;
    let rank = eig.eigenvalues.iter().filter(|&&e| e > tol && e > 0.0).count();
    let ridge = rank < 3;
    let inv = if ridge {
        // (RᵀR + εI)⁻¹ through the eigenbasis keeps the null space exact
        let mut inv = Matrix3::<f64>::zeros();
        for (k, &e) in eig.eigenvalues.iter().enumerate() {
            let v = eig.eigenvectors.column(k);
            inv += v * v.transpose() / (e.max(0.0) + CALIBRATION_RIDGE);
        }
        inv
    } else {
        rr.try_inverse().ok_or_else(|| Error::invalid("calibration system is singular"))?
    };
    let map = CalibrationMap::from_matrix(&(or * inv));
    if !map.is_finite() {
        return Err(Error::invalid("calibration produced non-finite entries"));
    }
    Ok(CalibrationFit {
        map,
        rank,
        ridge,
        residual: calibration_residual(&map, rendered, observed),
    })
}

/// Solves on whole images.
pub fn calibrate_images(rendered: &Image, observed: &Image) -> Result<CalibrationFit> {
    if !rendered.same_shape(observed) {
        return Err(Error::invalid("calibration images differ in size"));
    }
    calibrate_solve(rendered.pixels(), observed.pixels())
}

/// Per-image embeddings feeding an MLP that outputs the 9 matrix entries,
/// initialized to the identity map.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationNet {
    pub embeddings: ParamHandle,
    pub mlp: Mlp,
    pub images: usize,
}

impl CalibrationNet {
    pub fn register(tape: &mut ParamTape, images: usize, rng: &mut StreamRng) -> Self {
        let emb: Vec<f64> = (0..images * EMBEDDING_DIM).map(|_| rng.random_range(-0.1..0.1)).collect();
        let embeddings = tape.register("calibration.embedding", "calibration", images, EMBEDDING_DIM, emb);
        let mut sizes = vec![EMBEDDING_DIM];
        sizes.extend(CALIBRATION_HIDDEN);
        sizes.push(9);
        let spec = MlpSpec {
            sizes,
            activation: Activation::Softplus { beta: 1.0 },
            init: Init::Xavier,
            zero_last: true,
        };
        let mlp = Mlp::register(tape, "calibration", "calibration", spec, rng);
        let bias = tape.slice_mut(mlp.output_bias());
        for i in 0..3 {
            bias[4 * i] = 1.0;
        }
        CalibrationNet { embeddings, mlp, images }
    }

    /// `[R × 9]` row-major matrices for each ray's image.
    pub fn matrices(&self, g: &mut Graph, image_ids: &[usize]) -> Var {
        let e = g.param(self.embeddings);
        let rows = g.gather_rows(e, image_ids.to_vec());
        self.mlp.forward(g, rows)
    }

    /// Applies each ray's map to `[R × 3]` radiance.
    pub fn apply(&self, g: &mut Graph, rgb: Var, image_ids: &[usize]) -> Var {
        let m = self.matrices(g, image_ids);
        g.row_mat3_vec(m, rgb)
    }

    /// Current map for one image.
    pub fn map(&self, tape: &ParamTape, image: usize) -> CalibrationMap {
        let e = tape.slice(self.embeddings);
        let x = Array2::from_shape_vec((1, EMBEDDING_DIM), e[image * EMBEDDING_DIM..(image + 1) * EMBEDDING_DIM].to_vec()).unwrap();
        let out = self.mlp.eval_batch(tape.values(), &x);
        let mut matrix = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                matrix[r][c] = out[[0, 3 * r + c]];
            }
        }
        CalibrationMap { matrix }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_pixels(n: usize, seed: u64) -> Vec<Rgb> {
        let mut rng = crate::rng::stream(seed, 0);
        (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect()
    }

    #[test]
    fn identity_and_diagonal_maps() {
        let p = [0.2, 0.4, 0.6];
        assert_eq!(CalibrationMap::identity().apply(p), p);
        assert_eq!(CalibrationMap::diagonal([2.0, 1.0, 1.0]).apply(p), [0.4, 0.4, 0.6]);
    }

    #[test]
    fn recovers_a_known_map() {
        let a = CalibrationMap {
            matrix: [[1.2, 0.1, -0.05], [0.03, 0.9, 0.1], [-0.1, 0.2, 1.1]],
        };
        let r = random_pixels(500, 1);
        let o: Vec<Rgb> = r.iter().map(|p| a.apply(*p)).collect();
        let fit = calibrate_solve(&r, &o).unwrap();
        assert!(!fit.ridge);
        for i in 0..3 {
            for j in 0..3 {
                assert!((fit.map.matrix[i][j] - a.matrix[i][j]).abs() < 1e-6);
            }
        }
        let same = calibrate_solve(&r, &r).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((same.map.matrix[i][j] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn grayscale_triggers_ridge() {
        let mut rng = crate::rng::stream(5, 0);
        let r: Vec<Rgb> = (0..200).map(|_| [rng.random::<f64>(); 3]).collect();
        let o: Vec<Rgb> = r.iter().map(|p| [0.5 * p[0], 0.7 * p[0], 0.2 * p[0]]).collect();
        let fit = calibrate_solve(&r, &o).unwrap();
        assert!(fit.ridge);
        assert_eq!(fit.rank, 1);
        // the unregularized optimum is exact here
        assert!(fit.residual <= 1e-6);
    }

    #[test]
    fn network_starts_at_identity() {
        let mut tape = ParamTape::new();
        let net = CalibrationNet::register(&mut tape, 4, &mut crate::rng::stream(1, 1));
        assert_eq!(net.map(&tape, 2), CalibrationMap::identity());
        let mut g = Graph::new(&tape);
        let rgb = g.constant(ndarray::array![[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]]);
        let out = net.apply(&mut g, rgb, &[0, 3]);
        assert_eq!(g.value(out), g.value(rgb));
    }
}
