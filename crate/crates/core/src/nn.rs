//! Small fully connected networks registered on a [`ParamTape`].
//!
//! Every network has two evaluation paths that compute identical numbers:
//! a recorded path on a [`Graph`] for training, and a plain batched path
//! over a parameter slice for tracing and rendering without gradients.
//! Both can propagate forward tangents, which is how SDF gradients (and so
//! normals and the Eikonal term) stay differentiable with respect to weights.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::StreamRng;
use crate::tape::{Graph, ParamHandle, ParamTape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    /// `sin(ω0 z)`.
    Sine { omega0: f64 },
    /// `ln(1 + e^{βz})/β`.
    Softplus { beta: f64 },
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match *self {
            Activation::Sine { omega0 } => (omega0 * z).sin(),
            Activation::Softplus { beta } => {
                let t = beta * z;
                if t > 30.0 {
                    z
                } else {
                    t.exp().ln_1p() / beta
                }
            }
        }
    }

    fn derivative(&self, z: f64) -> f64 {
        match *self {
            Activation::Sine { omega0 } => omega0 * (omega0 * z).cos(),
            Activation::Softplus { beta } => {
                let t = beta * z;
                if t >= 0.0 {
                    1.0 / (1.0 + (-t).exp())
                } else {
                    let e = t.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    fn apply_graph(&self, g: &mut Graph, z: Var) -> Var {
        match *self {
            Activation::Sine { omega0 } => {
                let s = g.scale(z, omega0);
                g.sin(s)
            }
            Activation::Softplus { beta } => g.softplus(z, beta),
        }
    }

    fn derivative_graph(&self, g: &mut Graph, z: Var) -> Var {
        match *self {
            Activation::Sine { omega0 } => {
                let s = g.scale(z, omega0);
                let c = g.cos(s);
                g.scale(c, omega0)
            }
            Activation::Softplus { beta } => {
                let s = g.scale(z, beta);
                g.sigmoid(s)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Sinusoidal-network scheme: first layer `U(±1/fan_in)`, later layers
    /// `U(±√(6/fan_in)/ω0)`.
    Siren,
    /// `U(±√(6/(fan_in + fan_out)))`.
    Xavier,
}

/// Architecture description, also stored in weight-blob sidecars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    /// Input width, hidden widths, output width.
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub init: Init,
    /// Zero the last layer so the network starts as the zero function.
    #[serde(default)]
    pub zero_last: bool,
}

impl MlpSpec {
    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dense {
    w: ParamHandle,
    b: ParamHandle,
}

/// Multilayer perceptron whose weights live on a [`ParamTape`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Dense>,
}

impl Mlp {
    pub fn register(tape: &mut ParamTape, name: &str, group: &str, spec: MlpSpec, rng: &mut StreamRng) -> Mlp {
        assert!(spec.sizes.len() >= 2, "an MLP needs input and output widths");
        let n = spec.sizes.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for (i, w) in spec.sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = if spec.zero_last && i == n - 1 {
                0.0
            } else {
                match (spec.init, spec.activation) {
                    (Init::Siren, _) if i == 0 => 1.0 / fan_in as f64,
                    (Init::Siren, Activation::Sine { omega0 }) => (6.0 / fan_in as f64).sqrt() / omega0,
                    (Init::Siren, _) => (6.0 / fan_in as f64).sqrt(),
                    (Init::Xavier, _) => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                }
            };
            let weights: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 })
                .collect();
            let bias_bound = if bound > 0.0 && spec.init == Init::Siren { bound } else { 0.0 };
            let bias: Vec<f64> = (0..fan_out)
                .map(|_| if bias_bound > 0.0 { rng.random_range(-bias_bound..bias_bound) } else { 0.0 })
                .collect();
            let w = tape.register(&format!("{name}.{i}.weight"), group, fan_in, fan_out, weights);
            let b = tape.register(&format!("{name}.{i}.bias"), group, 1, fan_out, bias);
            layers.push(Dense { w, b });
        }
        Mlp { spec, layers }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    /// Parameter handles in registration order (weight, bias per layer).
    pub fn handles(&self) -> Vec<ParamHandle> {
        self.layers.iter().flat_map(|l| [l.w, l.b]).collect()
    }

    pub fn output_bias(&self) -> ParamHandle {
        self.layers.last().unwrap().b
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            let w = g.param(l.w);
            let b = g.param(l.b);
            let z = g.matmul(h, w);
            let z = g.add(z, b);
            h = if i == last { z } else { self.spec.activation.apply_graph(g, z) };
        }
        h
    }

    /// Forward pass that also pushes tangent vectors `dx` through the network.
    pub fn forward_tangents(&self, g: &mut Graph, x: Var, dx: &[Var]) -> (Var, Vec<Var>) {
        let last = self.layers.len() - 1;
        let mut h = x;
        let mut dh = dx.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let w = g.param(l.w);
            let b = g.param(l.b);
            let z = g.matmul(h, w);
            let z = g.add(z, b);
            let dz: Vec<Var> = dh.iter().map(|d| g.matmul(*d, w)).collect();
            if i == last {
                h = z;
                dh = dz;
            } else {
                let act = self.spec.activation;
                h = act.apply_graph(g, z);
                let slope = act.derivative_graph(g, z);
                dh = dz.into_iter().map(|d| g.mul(slope, d)).collect();
            }
        }
        (h, dh)
    }

    fn weights<'p>(&self, params: &'p [f64], l: &Dense) -> (ArrayView2<'p, f64>, ArrayView2<'p, f64>) {
        let w = ArrayView2::from_shape((l.w.rows, l.w.cols), &params[l.w.range()]).unwrap();
        let b = ArrayView2::from_shape((1, l.b.cols), &params[l.b.range()]).unwrap();
        (w, b)
    }

    /// Batched evaluation without a graph. `x` is `[N × input]`.
    pub fn eval_batch(&self, params: &[f64], x: &Array2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let (w, b) = self.weights(params, l);
            let mut z = h.dot(&w);
            z += &b;
            if i != last {
                let act = self.spec.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            h = z;
        }
        h
    }

    /// Batched evaluation with forward tangents.
    pub fn eval_batch_tangents(
        &self,
        params: &[f64],
        x: &Array2<f64>,
        dx: &[Array2<f64>],
    ) -> (Array2<f64>, Vec<Array2<f64>>) {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        let mut dh = dx.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let (w, b) = self.weights(params, l);
            let mut z = h.dot(&w);
            z += &b;
            let mut dz: Vec<Array2<f64>> = dh.iter().map(|d| d.dot(&w)).collect();
            if i != last {
                let act = self.spec.activation;
                let slope = z.mapv(|v| act.derivative(v));
                for d in dz.iter_mut() {
                    *d *= &slope;
                }
                z.mapv_inplace(|v| act.apply(v));
            }
            h = z;
            dh = dz;
        }
        (h, dh)
    }
}

/// Frequency encoding `[sin(2^k π x), cos(2^k π x)]` for `k < bands`,
/// grouped by band. Returns the encoding and its derivative with respect to
/// each input coordinate.
pub fn positional_encoding(x: &Array2<f64>, bands: usize) -> (Array2<f64>, Vec<Array2<f64>>) {
    let (n, d) = x.dim();
    let width = 2 * d * bands;
    let mut enc = Array2::zeros((n, width));
    let mut tangents = vec![Array2::zeros((n, width)); d];
    for (i, row) in x.axis_iter(Axis(0)).enumerate() {
        for k in 0..bands {
            let f = (1u64 << k) as f64 * std::f64::consts::PI;
            for j in 0..d {
                let (s, c) = (f * row[j]).sin_cos();
                let si = 2 * d * k + j;
                let ci = si + d;
                enc[[i, si]] = s;
                enc[[i, ci]] = c;
                tangents[j][[i, si]] = f * c;
                tangents[j][[i, ci]] = -f * s;
            }
        }
    }
    (enc, tangents)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn spec(act: Activation, init: Init) -> MlpSpec {
        MlpSpec {
            sizes: vec![3, 8, 8, 2],
            activation: act,
            init,
            zero_last: false,
        }
    }

    #[test]
    fn graph_and_batch_paths_agree() {
        for act in [Activation::Sine { omega0: 30.0 }, Activation::Softplus { beta: 10.0 }] {
            let mut tape = ParamTape::new();
            let mut r = rng::stream(3, 0);
            let mlp = Mlp::register(&mut tape, "f", "g", spec(act, Init::Siren), &mut r);
            assert_eq!(tape.len(), mlp.spec().param_count());
            let x = Array2::from_shape_fn((5, 3), |(i, j)| 0.1 * i as f64 - 0.07 * j as f64);
            let dx: Vec<Array2<f64>> = (0..3)
                .map(|k| Array2::from_shape_fn((5, 3), |(_, j)| if j == k { 1.0 } else { 0.0 }))
                .collect();
            let (y, dy) = mlp.eval_batch_tangents(tape.values(), &x, &dx);
            let mut g = Graph::new(&tape);
            let xv = g.constant(x.clone());
            let dxv: Vec<Var> = dx.iter().map(|d| g.constant(d.clone())).collect();
            let (yg, dyg) = mlp.forward_tangents(&mut g, xv, &dxv);
            assert!((g.value(yg) - &y).iter().all(|v| v.abs() < 1e-12));
            for k in 0..3 {
                assert!((g.value(dyg[k]) - &dy[k]).iter().all(|v| v.abs() < 1e-12));
            }
            assert!((mlp.eval_batch(tape.values(), &x) - &y).iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn tangents_match_finite_differences() {
        let mut tape = ParamTape::new();
        let mut r = rng::stream(5, 0);
        let mlp = Mlp::register(&mut tape, "f", "g", spec(Activation::Softplus { beta: 5.0 }, Init::Xavier), &mut r);
        let x = Array2::from_shape_vec((1, 3), vec![0.2, -0.3, 0.5]).unwrap();
        let e: Vec<Array2<f64>> = (0..3)
            .map(|k| Array2::from_shape_fn((1, 3), |(_, j)| if j == k { 1.0 } else { 0.0 }))
            .collect();
        let (_, dy) = mlp.eval_batch_tangents(tape.values(), &x, &e);
        let h = 1e-5;
        for k in 0..3 {
            let fp = mlp.eval_batch(tape.values(), &(&x + &(&e[k] * h)));
            let fm = mlp.eval_batch(tape.values(), &(&x - &(&e[k] * h)));
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - &dy[k]).iter().all(|v| v.abs() < 1e-8));
        }
    }

    #[test]
    fn zero_last_starts_at_zero() {
        let mut tape = ParamTape::new();
        let mut s = spec(Activation::Softplus { beta: 100.0 }, Init::Xavier);
        s.zero_last = true;
        let mlp = Mlp::register(&mut tape, "d", "g", s, &mut rng::stream(1, 0));
        let x = Array2::from_elem((4, 3), 0.3);
        assert!(mlp.eval_batch(tape.values(), &x).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn encoding_width_and_derivative() {
        let x = Array2::from_shape_vec((1, 3), vec![0.1, 0.2, -0.4]).unwrap();
        let (enc, t) = positional_encoding(&x, 6);
        assert_eq!(enc.ncols(), 36);
        let h = 1e-6;
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[[0, 1]] += h;
        xm[[0, 1]] -= h;
        let fd = (positional_encoding(&xp, 6).0 - positional_encoding(&xm, 6).0) / (2.0 * h);
        assert!((fd - &t[1]).iter().all(|v| v.abs() < 1e-5));
        assert_eq!(enc[[0, 0]], (std::f64::consts::PI * 0.1).sin());
    }
}
