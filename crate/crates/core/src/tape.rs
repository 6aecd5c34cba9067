//! Reverse-mode differentiation over batched 2-D arrays.
//!
//! [`ParamTape`] owns every learnable value as one flat vector plus an equal
//! length gradient vector, partitioned into named entries and learning-rate
//! groups. A [`Graph`] records a forward pass over `[rows × cols]` arrays
//! (rows are batch items) and [`Graph::backward`] returns exact gradients
//! with respect to the parameters and any input leaves.
//!
//! Binary element-wise ops broadcast a dimension of size 1 against any size.
//! Kinks (`relu`, `abs`) use subgradient 0.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::sh;
use crate::{Error, Result};

/// Location of one parameter block inside a [`ParamTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamHandle {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamHandle {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub group: String,
    pub handle: ParamHandle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub lr_mult: f64,
}

/// Flat learnable-parameter vector with gradient storage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamTape {
    values: Vec<f64>,
    grads: Vec<f64>,
    entries: Vec<ParamEntry>,
    groups: Vec<ParamGroup>,
}

impl ParamTape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a block of `rows × cols` values (row-major) under `group`.
    pub fn register(&mut self, name: &str, group: &str, rows: usize, cols: usize, init: Vec<f64>) -> ParamHandle {
        assert_eq!(init.len(), rows * cols, "init length for {name}");
        if !self.groups.iter().any(|g| g.name == group) {
            self.groups.push(ParamGroup {
                name: group.to_string(),
                lr_mult: 1.0,
            });
        }
        let handle = ParamHandle {
            offset: self.values.len(),
            rows,
            cols,
        };
        self.values.extend(init);
        self.grads.resize(self.values.len(), 0.0);
        self.entries.push(ParamEntry {
            name: name.to_string(),
            group: group.to_string(),
            handle,
        });
        handle
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                got: values.len(),
            });
        }
        self.values.copy_from_slice(values);
        Ok(())
    }

    pub fn slice(&self, h: ParamHandle) -> &[f64] {
        &self.values[h.range()]
    }

    pub fn slice_mut(&mut self, h: ParamHandle) -> &mut [f64] {
        &mut self.values[h.range()]
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn set_group_lr(&mut self, group: &str, mult: f64) {
        match self.groups.iter_mut().find(|g| g.name == group) {
            Some(g) => g.lr_mult = mult,
            None => self.groups.push(ParamGroup {
                name: group.to_string(),
                lr_mult: mult,
            }),
        }
    }

    pub fn group_lr(&self, group: &str) -> f64 {
        self.groups
            .iter()
            .find(|g| g.name == group)
            .map(|g| g.lr_mult)
            .unwrap_or(1.0)
    }

    /// Per-element learning-rate multipliers.
    pub fn lr_multipliers(&self) -> Vec<f64> {
        let mut out = vec![1.0; self.values.len()];
        for e in &self.entries {
            let m = self.group_lr(&e.group);
            out[e.handle.range()].iter_mut().for_each(|v| *v = m);
        }
        out
    }

    pub fn entry_at(&self, index: usize) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.handle.range().contains(&index))
    }

    pub fn find(&self, name: &str) -> Option<ParamHandle> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.handle)
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Stores `grads` after checking every entry is finite.
    pub fn set_grads(&mut self, grads: Vec<f64>) -> Result<()> {
        if grads.len() != self.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                got: grads.len(),
            });
        }
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            let param = self
                .entry_at(index)
                .map(|e| e.name.clone())
                .unwrap_or_else(|| "?".into());
            return Err(Error::NonFiniteGradient { param, index });
        }
        self.grads = grads;
        Ok(())
    }
}

/// Node id inside a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Scalar function of one variable with its derivative, for table lookups.
pub trait Curve: Send + Sync {
    /// Returns `(value, derivative)` at `x`.
    fn eval_with_derivative(&self, x: f64) -> (f64, f64);
}

#[derive(Debug, Clone, Copy)]
enum Unary {
    Neg,
    Exp,
    Ln,
    Sin,
    Cos,
    Sigmoid,
    Softplus(f64),
    Relu,
    Abs,
    Sqrt,
    Square,
    Recip,
    LaplaceCdf,
    Scale(f64),
    AddScalar(f64),
}

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

enum Op {
    Leaf,
    Param(usize),
    Unary(Unary, Var),
    Binary(Binary, Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SumCols(Var),
    SumRows(Var),
    SumAll(Var),
    GroupSumRows(Var, usize),
    RepeatRows(Var, usize),
    CumsumExclusiveCols(Var),
    GatherRows(Var, Arc<Vec<usize>>),
    ShBasis(Var, usize),
    Curves(Var, Arc<Vec<Arc<dyn Curve>>>),
    RowMat3Vec(Var, Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Recorded forward computation.
pub struct Graph<'a> {
    params: &'a ParamTape,
    nodes: Vec<Node>,
    param_cache: HashMap<usize, Var>,
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    pub params: Vec<f64>,
    inputs: HashMap<usize, Array2<f64>>,
}

impl Gradients {
    /// Gradient with respect to an input leaf created by [`Graph::input`].
    pub fn wrt(&self, v: Var) -> Option<&Array2<f64>> {
        self.inputs.get(&v.0)
    }
}

fn softplus(x: f64, beta: f64) -> f64 {
    let z = beta * x;
    if z > 30.0 {
        x
    } else {
        z.exp().ln_1p() / beta
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn laplace_cdf(y: f64) -> f64 {
    if y <= 0.0 {
        0.5 * y.exp()
    } else {
        1.0 - 0.5 * (-y).exp()
    }
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

/// Sums `g` down to `shape` over broadcast dimensions.
fn reduce_to(g: Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

impl<'a> Graph<'a> {
    pub fn new(params: &'a ParamTape) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(256),
            param_cache: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'a ParamTape {
        self.params
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let a = self.value(v);
        assert_eq!(a.dim(), (1, 1), "scalar() on non-scalar node");
        a[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant leaf (no gradient).
    pub fn constant(&mut self, a: Array2<f64>) -> Var {
        self.push(a, Op::Leaf, false)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), v))
    }

    /// Leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, a: Array2<f64>) -> Var {
        self.push(a, Op::Leaf, true)
    }

    /// Parameter block as a `rows × cols` node. Repeated calls share a node.
    pub fn param(&mut self, h: ParamHandle) -> Var {
        if let Some(v) = self.param_cache.get(&h.offset) {
            if self.shape(*v) == (h.rows, h.cols) {
                return *v;
            }
        }
        let a = Array2::from_shape_vec((h.rows, h.cols), self.params.slice(h).to_vec())
            .expect("param shape");
        let v = self.push(a, Op::Param(h.offset), true);
        self.param_cache.insert(h.offset, v);
        v
    }

    fn unary(&mut self, op: Unary, a: Var) -> Var {
        let x = self.value(a);
        let y = match op {
            Unary::Neg => x.mapv(|v| -v),
            Unary::Exp => x.mapv(f64::exp),
            Unary::Ln => x.mapv(f64::ln),
            Unary::Sin => x.mapv(f64::sin),
            Unary::Cos => x.mapv(f64::cos),
            Unary::Sigmoid => x.mapv(sigmoid),
            Unary::Softplus(b) => x.mapv(|v| softplus(v, b)),
            Unary::Relu => x.mapv(|v| v.max(0.0)),
            Unary::Abs => x.mapv(f64::abs),
            Unary::Sqrt => x.mapv(f64::sqrt),
            Unary::Square => x.mapv(|v| v * v),
            Unary::Recip => x.mapv(|v| 1.0 / v),
            Unary::LaplaceCdf => x.mapv(laplace_cdf),
            Unary::Scale(c) => x.mapv(|v| v * c),
            Unary::AddScalar(c) => x.mapv(|v| v + c),
        };
        let ng = self.needs(a);
        self.push(y, Op::Unary(op, a), ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(Unary::Neg, a)
    }
    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a)
    }
    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(Unary::Ln, a)
    }
    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(Unary::Sin, a)
    }
    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(Unary::Cos, a)
    }
    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }
    /// `ln(1 + e^{βx})/β`.
    pub fn softplus(&mut self, a: Var, beta: f64) -> Var {
        self.unary(Unary::Softplus(beta), a)
    }
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(Unary::Abs, a)
    }
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(Unary::Sqrt, a)
    }
    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Unary::Square, a)
    }
    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(Unary::Recip, a)
    }
    /// CDF of the zero-mean unit-scale Laplace distribution.
    pub fn laplace_cdf(&mut self, a: Var) -> Var {
        self.unary(Unary::LaplaceCdf, a)
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(Unary::Scale(c), a)
    }
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(Unary::AddScalar(c), a)
    }

    fn binary(&mut self, op: Binary, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ok = broadcast_dim(sa.0, sb.0).is_some() && broadcast_dim(sa.1, sb.1).is_some();
        assert!(ok, "incompatible shapes {sa:?} and {sb:?} for {op:?}");
        let (x, y) = (self.value(a), self.value(b));
        let out = match op {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Binary(op, a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Mul, a, b)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Div, a, b)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        let ng = self.needs(a);
        self.push(out, Op::Transpose(a), ng)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let flat: Vec<f64> = self.value(a).iter().copied().collect();
        let out = Array2::from_shape_vec((rows, cols), flat).expect("reshape size");
        let ng = self.needs(a);
        self.push(out, Op::Reshape(a), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        let ng = self.needs(a);
        self.push(out, Op::SliceCols(a, start), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat cols");
        let ng = parts.iter().any(|v| self.needs(*v));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat rows");
        let ng = parts.iter().any(|v| self.needs(*v));
        self.push(out, Op::ConcatRows(parts.to_vec()), ng)
    }

    /// `[N × c] → [N × 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ng = self.needs(a);
        self.push(out, Op::SumCols(a), ng)
    }

    /// `[N × c] → [1 × c]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        let ng = self.needs(a);
        self.push(out, Op::SumRows(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        let ng = self.needs(a);
        self.push(out, Op::SumAll(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sums consecutive blocks of `group` rows: `[N·g × c] → [N × c]`.
    pub fn group_sum_rows(&mut self, a: Var, group: usize) -> Var {
        let x = self.value(a);
        let (n, c) = x.dim();
        assert_eq!(n % group, 0, "rows not divisible by group");
        let mut out = Array2::zeros((n / group, c));
        for (i, row) in x.outer_iter().enumerate() {
            let mut o = out.row_mut(i / group);
            o += &row;
        }
        let ng = self.needs(a);
        self.push(out, Op::GroupSumRows(a, group), ng)
    }

    /// Repeats each row `times` times: `[N × c] → [N·times × c]`.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        let x = self.value(a);
        let (n, c) = x.dim();
        let mut out = Array2::zeros((n * times, c));
        for (i, row) in x.outer_iter().enumerate() {
            for k in 0..times {
                out.row_mut(i * times + k).assign(&row);
            }
        }
        let ng = self.needs(a);
        self.push(out, Op::RepeatRows(a, times), ng)
    }

    /// Exclusive prefix sum along each row: `out[i, j] = Σ_{k<j} a[i, k]`.
    pub fn cumsum_exclusive_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = Array2::zeros(x.dim());
        for (mut o, r) in out.outer_iter_mut().zip(x.outer_iter()) {
            let mut acc = 0.0;
            for (ov, rv) in o.iter_mut().zip(r.iter()) {
                *ov = acc;
                acc += rv;
            }
        }
        let ng = self.needs(a);
        self.push(out, Op::CumsumExclusiveCols(a), ng)
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let x = self.value(a);
        let mut out = Array2::zeros((idx.len(), x.ncols()));
        for (i, &j) in idx.iter().enumerate() {
            out.row_mut(i).assign(&x.row(j));
        }
        let ng = self.needs(a);
        self.push(out, Op::GatherRows(a, Arc::new(idx)), ng)
    }

    /// Real SH basis of each row of a `[N × 3]` direction array.
    pub fn sh_basis(&mut self, dirs: Var, l_max: usize) -> Var {
        let x = self.value(dirs);
        assert_eq!(x.ncols(), 3);
        let k = sh::sh_count(l_max);
        let mut out = Array2::zeros((x.nrows(), k));
        for (mut o, r) in out.outer_iter_mut().zip(x.outer_iter()) {
            let slice = o.as_slice_mut().expect("contiguous");
            sh::eval_sh_generic(r[0], r[1], r[2], l_max, slice);
        }
        let ng = self.needs(dirs);
        self.push(out, Op::ShBasis(dirs, l_max), ng)
    }

    /// Applies each curve to a `[N × 1]` column: `→ [N × curves.len()]`.
    pub fn curves(&mut self, x: Var, curves: Arc<Vec<Arc<dyn Curve>>>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.ncols(), 1);
        let mut out = Array2::zeros((xv.nrows(), curves.len()));
        for i in 0..xv.nrows() {
            for (j, c) in curves.iter().enumerate() {
                out[[i, j]] = c.eval_with_derivative(xv[[i, 0]]).0;
            }
        }
        let ng = self.needs(x);
        self.push(out, Op::Curves(x, curves), ng)
    }

    /// Row-wise `3×3` matrix (row-major in 9 columns) times a 3-vector.
    pub fn row_mat3_vec(&mut self, m: Var, v: Var) -> Var {
        let (mv, vv) = (self.value(m), self.value(v));
        assert_eq!(mv.ncols(), 9);
        assert_eq!(vv.ncols(), 3);
        assert_eq!(mv.nrows(), vv.nrows());
        let mut out = Array2::zeros((vv.nrows(), 3));
        for i in 0..vv.nrows() {
            for r in 0..3 {
                out[[i, r]] = (0..3).map(|c| mv[[i, 3 * r + c]] * vv[[i, c]]).sum();
            }
        }
        let ng = self.needs(m) || self.needs(v);
        self.push(out, Op::RowMat3Vec(m, v), ng)
    }

    /// Row-wise dot product of two `[N × c]` arrays: `→ [N × 1]`.
    pub fn dot_rows(&mut self, a: Var, b: Var) -> Var {
        let p = self.mul(a, b);
        self.sum_cols(p)
    }

    /// Row-wise Euclidean norm with `eps` added under the root.
    pub fn norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let sq = self.square(a);
        let s = self.sum_cols(sq);
        let s = self.add_scalar(s, eps);
        self.sqrt(s)
    }

    /// Reverse sweep from scalar node `out`.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.shape(out), (1, 1), "backward needs a scalar output");
        let mut adj: Vec<Option<Array2<f64>>> = (0..=out.0).map(|_| None).collect();
        adj[out.0] = Some(Array2::from_elem((1, 1), 1.0));
        let mut params = vec![0.0; self.params.len()];
        let mut inputs = HashMap::new();

        fn acc(adj: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut adj[v.0] {
                Some(a) => *a += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            let y = &node.value;
            match &node.op {
                Op::Leaf => {
                    inputs.insert(i, g);
                }
                Op::Param(offset) => {
                    for (k, v) in g.iter().enumerate() {
                        params[offset + k] += v;
                    }
                }
                Op::Unary(op, a) => {
                    let x = &self.nodes[a.0].value;
                    let mut ga = g;
                    match op {
                        Unary::Neg => ga.mapv_inplace(|v| -v),
                        Unary::Exp => ga *= y,
                        Unary::Ln => ga /= x,
                        Unary::Sin => Zip::from(&mut ga).and(x).for_each(|g, &x| *g *= x.cos()),
                        Unary::Cos => Zip::from(&mut ga).and(x).for_each(|g, &x| *g *= -x.sin()),
                        Unary::Sigmoid => Zip::from(&mut ga).and(y).for_each(|g, &y| *g *= y * (1.0 - y)),
                        Unary::Softplus(b) => {
                            Zip::from(&mut ga).and(x).for_each(|g, &x| *g *= sigmoid(b * x))
                        }
                        Unary::Relu => Zip::from(&mut ga)
                            .and(x)
                            .for_each(|g, &x| *g = if x > 0.0 { *g } else { 0.0 }),
                        Unary::Abs => Zip::from(&mut ga).and(x).for_each(|g, &x| {
                            *g *= if x > 0.0 {
                                1.0
                            } else if x < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        }),
                        Unary::Sqrt => Zip::from(&mut ga).and(y).for_each(|g, &y| *g *= 0.5 / y),
                        Unary::Square => Zip::from(&mut ga).and(x).for_each(|g, &x| *g *= 2.0 * x),
                        Unary::Recip => Zip::from(&mut ga).and(y).for_each(|g, &y| *g *= -y * y),
                        Unary::LaplaceCdf => {
                            Zip::from(&mut ga).and(x).for_each(|g, &x| *g *= 0.5 * (-x.abs()).exp())
                        }
                        Unary::Scale(c) => ga.mapv_inplace(|v| v * c),
                        Unary::AddScalar(_) => {}
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::Binary(op, a, b) => {
                    let (xa, xb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (na, nb) = (self.needs(*a), self.needs(*b));
                    match op {
                        Binary::Add => {
                            if na {
                                acc(&mut adj, *a, reduce_to(g.clone(), xa.dim()));
                            }
                            if nb {
                                acc(&mut adj, *b, reduce_to(g, xb.dim()));
                            }
                        }
                        Binary::Sub => {
                            if na {
                                acc(&mut adj, *a, reduce_to(g.clone(), xa.dim()));
                            }
                            if nb {
                                acc(&mut adj, *b, reduce_to(-g, xb.dim()));
                            }
                        }
                        Binary::Mul => {
                            if na {
                                acc(&mut adj, *a, reduce_to(&g * xb, xa.dim()));
                            }
                            if nb {
                                acc(&mut adj, *b, reduce_to(&g * xa, xb.dim()));
                            }
                        }
                        Binary::Div => {
                            if na {
                                acc(&mut adj, *a, reduce_to(&g / xb, xa.dim()));
                            }
                            if nb {
                                // d(a/b)/db = -y/b
                                let gb = &(&g * y) / xb;
                                acc(&mut adj, *b, reduce_to(-gb, xb.dim()));
                            }
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        acc(&mut adj, *a, g.dot(&self.nodes[b.0].value.t()));
                    }
                    if self.needs(*b) {
                        acc(&mut adj, *b, self.nodes[a.0].value.t().dot(&g));
                    }
                }
                Op::Transpose(a) => acc(&mut adj, *a, g.t().to_owned()),
                Op::Reshape(a) => {
                    let shape = self.nodes[a.0].value.dim();
                    let flat: Vec<f64> = g.iter().copied().collect();
                    acc(&mut adj, *a, Array2::from_shape_vec(shape, flat).unwrap());
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(self.nodes[a.0].value.dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut adj, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.ncols();
                        if self.needs(*p) {
                            acc(&mut adj, *p, g.slice(s![.., start..start + w]).to_owned());
                        }
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = self.nodes[p.0].value.nrows();
                        if self.needs(*p) {
                            acc(&mut adj, *p, g.slice(s![start..start + h, ..]).to_owned());
                        }
                        start += h;
                    }
                }
                Op::SumCols(a) => {
                    let shape = self.nodes[a.0].value.dim();
                    acc(&mut adj, *a, g.broadcast(shape).unwrap().to_owned());
                }
                Op::SumRows(a) => {
                    let shape = self.nodes[a.0].value.dim();
                    acc(&mut adj, *a, g.broadcast(shape).unwrap().to_owned());
                }
                Op::SumAll(a) => {
                    let shape = self.nodes[a.0].value.dim();
                    acc(&mut adj, *a, Array2::from_elem(shape, g[[0, 0]]));
                }
                Op::GroupSumRows(a, group) => {
                    let shape = self.nodes[a.0].value.dim();
                    let mut ga = Array2::zeros(shape);
                    for (i, mut row) in ga.outer_iter_mut().enumerate() {
                        row.assign(&g.row(i / group));
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::RepeatRows(a, times) => {
                    let shape = self.nodes[a.0].value.dim();
                    let mut ga = Array2::zeros(shape);
                    for (i, row) in g.outer_iter().enumerate() {
                        let mut o = ga.row_mut(i / times);
                        o += &row;
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::CumsumExclusiveCols(a) => {
                    // d out[j] / d a[k] = 1 for k < j: suffix sums of g, shifted
                    let mut ga = Array2::zeros(g.dim());
                    for (mut o, r) in ga.outer_iter_mut().zip(g.outer_iter()) {
                        let mut accum = 0.0;
                        for j in (0..r.len()).rev() {
                            o[j] = accum;
                            accum += r[j];
                        }
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::GatherRows(a, idx) => {
                    let mut ga = Array2::zeros(self.nodes[a.0].value.dim());
                    for (i, &j) in idx.iter().enumerate() {
                        let mut o = ga.row_mut(j);
                        o += &g.row(i);
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::ShBasis(a, l_max) => {
                    let x = &self.nodes[a.0].value;
                    let k = sh::sh_count(*l_max);
                    let mut vals = vec![0.0; k];
                    let mut grads = vec![[0.0; 3]; k];
                    let mut ga = Array2::zeros(x.dim());
                    for i in 0..x.nrows() {
                        sh::eval_sh_with_gradient(&[x[[i, 0]], x[[i, 1]], x[[i, 2]]], *l_max, &mut vals, &mut grads);
                        for (j, gr) in grads.iter().enumerate() {
                            let w = g[[i, j]];
                            for d in 0..3 {
                                ga[[i, d]] += w * gr[d];
                            }
                        }
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::Curves(a, curves) => {
                    let x = &self.nodes[a.0].value;
                    let mut ga = Array2::zeros(x.dim());
                    for i in 0..x.nrows() {
                        ga[[i, 0]] = curves
                            .iter()
                            .enumerate()
                            .map(|(j, c)| g[[i, j]] * c.eval_with_derivative(x[[i, 0]]).1)
                            .sum();
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::RowMat3Vec(m, v) => {
                    let (mv, vv) = (&self.nodes[m.0].value, &self.nodes[v.0].value);
                    if self.needs(*m) {
                        let mut gm = Array2::zeros(mv.dim());
                        for i in 0..vv.nrows() {
                            for r in 0..3 {
                                for c in 0..3 {
                                    gm[[i, 3 * r + c]] = g[[i, r]] * vv[[i, c]];
                                }
                            }
                        }
                        acc(&mut adj, *m, gm);
                    }
                    if self.needs(*v) {
                        let mut gv = Array2::zeros(vv.dim());
                        for i in 0..vv.nrows() {
                            for c in 0..3 {
                                gv[[i, c]] = (0..3).map(|r| g[[i, r]] * mv[[i, 3 * r + c]]).sum();
                            }
                        }
                        acc(&mut adj, *v, gv);
                    }
                }
            }
        }
        Gradients { params, inputs }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sum_of_squares_gradient_is_exact() {
        let mut tape = ParamTape::new();
        let h = tape.register("w", "g", 2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.5]);
        let mut g = Graph::new(&tape);
        let w = g.param(h);
        let sq = g.square(w);
        let loss = g.sum(sq);
        let grads = g.backward(loss);
        let expect: Vec<f64> = tape.values().iter().map(|v| 2.0 * v).collect();
        assert_eq!(grads.params, expect);
    }

    #[test]
    fn relu_inactive_boundary_passes_gradient() {
        let tape = ParamTape::new();
        let mut g = Graph::new(&tape);
        let x = g.input(array![[2.0, -1.0]]);
        let r = g.relu(x);
        let s = g.sum(r);
        let grads = g.backward(s);
        assert_eq!(grads.wrt(x).unwrap(), &array![[1.0, 0.0]]);
    }

    #[test]
    fn broadcasting_reduces_gradients() {
        let tape = ParamTape::new();
        let mut g = Graph::new(&tape);
        let a = g.input(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let b = g.input(array![[10.0, 20.0]]);
        let c = g.input(array![[2.0], [3.0], [4.0]]);
        let ab = g.mul(a, b);
        let abc = g.mul(ab, c);
        let s = g.sum(abc);
        let grads = g.backward(s);
        // d/db_j = Σ_i a_ij c_i
        assert_eq!(grads.wrt(b).unwrap(), &array![[1.0 * 2.0 + 3.0 * 3.0 + 5.0 * 4.0, 2.0 * 2.0 + 4.0 * 3.0 + 6.0 * 4.0]]);
        assert_eq!(grads.wrt(c).unwrap(), &array![[50.0], [110.0], [170.0]]);
    }

    #[test]
    fn cumsum_and_group_sum_backward() {
        let tape = ParamTape::new();
        let mut g = Graph::new(&tape);
        let x = g.input(array![[1.0, 2.0, 3.0]]);
        let c = g.cumsum_exclusive_cols(x);
        assert_eq!(g.value(c), &array![[0.0, 1.0, 3.0]]);
        let w = g.constant(array![[1.0, 10.0, 100.0]]);
        let p = g.mul(c, w);
        let s = g.sum(p);
        let grads = g.backward(s);
        assert_eq!(grads.wrt(x).unwrap(), &array![[110.0, 100.0, 0.0]]);

        let mut g = Graph::new(&tape);
        let x = g.input(array![[1.0], [2.0], [3.0], [4.0]]);
        let gs = g.group_sum_rows(x, 2);
        assert_eq!(g.value(gs), &array![[3.0], [7.0]]);
        let w = g.constant(array![[1.0], [5.0]]);
        let p = g.mul(gs, w);
        let s = g.sum(p);
        let grads = g.backward(s);
        assert_eq!(grads.wrt(x).unwrap(), &array![[1.0], [1.0], [5.0], [5.0]]);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut tape = ParamTape::new();
        tape.register("a", "g", 1, 2, vec![0.0; 2]);
        tape.register("beta", "g", 1, 1, vec![0.0]);
        let err = tape.set_grads(vec![0.0, 0.0, f64::NAN]).unwrap_err();
        match err {
            Error::NonFiniteGradient { param, index } => {
                assert_eq!(param, "beta");
                assert_eq!(index, 2);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn constants_do_not_need_grad() {
        let mut tape = ParamTape::new();
        let h = tape.register("w", "g", 1, 1, vec![3.0]);
        let mut g = Graph::new(&tape);
        let c = g.constant(array![[2.0]]);
        let e = g.exp(c);
        let w = g.param(h);
        let p = g.mul(e, w);
        let grads = g.backward(p);
        assert!((grads.params[0] - 2f64.exp()).abs() < 1e-15);
        assert!(grads.wrt(c).is_none());
    }
}
