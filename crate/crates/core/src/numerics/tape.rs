use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::array::Array;
use super::math;
use super::params::ParamSet;
use crate::error::{bail, Result};

/// A row-major matrix, the value type of every tape node.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self { rows, cols, data: vec![v; rows * cols] }
    }

    /// Rank-1 arrays become a single row.
    pub fn from_array(a: &Array) -> Result<Self> {
        match *a.shape() {
            [n] => Ok(Self::new(1, n, a.data().to_vec())),
            [r, c] => Ok(Self::new(r, c, a.data().to_vec())),
            _ => bail!(Shape, "tape values must be rank 1 or 2, got shape {:?}", a.shape()),
        }
    }

    /// Stacks equal-length rows into a matrix.
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a Array>) -> Result<Self> {
        let mut data = Vec::new();
        let mut cols = None;
        let mut n = 0;
        for r in rows {
            match cols {
                None => cols = Some(r.len()),
                Some(c) if c != r.len() => {
                    bail!(Shape, "row {} has length {}, expected {}", n, r.len(), c)
                }
                _ => {}
            }
            data.extend_from_slice(r.data());
            n += 1;
        }
        match cols {
            Some(c) => Ok(Self::new(n, c, data)),
            None => bail!(Shape, "cannot stack zero rows"),
        }
    }

    pub fn to_array(&self, shape: &[usize]) -> Array {
        debug_assert_eq!(shape.iter().product::<usize>(), self.data.len());
        Array::from_parts(shape.to_vec(), self.data.clone())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn zip(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "elementwise shape mismatch");
        Mat::new(
            self.rows,
            self.cols,
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat::new(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }
}

/// `op(a) * op(b)` where `op` optionally transposes.
fn gemm(a: &Mat, b: &Mat, ta: bool, tb: bool) -> Mat {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, kb, "matmul inner dimension mismatch: {} vs {}", k, kb);
    let mut out = Mat::zeros(m, n);
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: the strides above address exactly the storage of `a` and `b`
    // for the logical (m x k) and (k x n) operands, and `out` is a fresh
    // (m x n) row-major buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Const,
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    /// `a (n x m) + b (1 x m)` broadcast over rows.
    AddRow(usize, usize),
    SumRows(usize),
    BroadcastRows(usize),
    SumCols(usize),
    BroadcastCols(usize),
    SumAll(usize),
    Expand(usize),
    Relu(usize),
    Tanh(usize),
    OneMinusSquare(usize),
    Exp(usize),
    LogSoftmax(usize),
    ConcatCols(Vec<usize>),
    SliceCols { a: usize, start: usize },
    PadCols { a: usize, start: usize },
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf | Const => vec![],
            MatMul { a, b, .. } => vec![*a, *b],
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) => vec![*a, *b],
            Scale(a, _)
            | SumRows(a)
            | BroadcastRows(a)
            | SumCols(a)
            | BroadcastCols(a)
            | SumAll(a)
            | Expand(a)
            | Relu(a)
            | Tanh(a)
            | OneMinusSquare(a)
            | Exp(a)
            | LogSoftmax(a)
            | SliceCols { a, .. }
            | PadCols { a, .. } => vec![*a],
            ConcatCols(xs) => xs.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Mat,
}

/// A reverse-mode tape over matrix operations.
///
/// [`Tape::grad`] records the backward pass as new nodes on the same tape, so
/// the returned gradients are ordinary differentiable values and `grad` can
/// be applied to expressions that contain gradients.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Mat) -> Var {
        debug_assert!(value.data.iter().all(|v| v.is_finite()), "non-finite value from {:?}", op);
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: usize) -> &Mat {
        &self.nodes[v].value
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.data.len(), 1, "not a scalar node");
        m.data[0]
    }

    /// A differentiable input.
    pub fn leaf(&mut self, m: Mat) -> Var {
        self.push(Op::Leaf, m)
    }

    /// A value that is never differentiated.
    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(Op::Const, m)
    }

    /// Copies `v`'s value into a fresh constant, cutting the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let m = self.val(v.0).clone();
        self.constant(m)
    }

    pub fn leaves(&mut self, params: &ParamSet) -> Result<Vec<Var>> {
        params.arrays().map(|a| Ok(self.leaf(Mat::from_array(a)?))).collect()
    }

    /// Reads `vars` back into a parameter set congruent with `like`.
    pub fn to_params(&self, like: &ParamSet, vars: &[Var]) -> Result<ParamSet> {
        let arrays = like
            .arrays()
            .zip(vars)
            .map(|(a, &v)| {
                let m = self.value(v);
                if m.data.len() != a.len() {
                    bail!(Shape, "tape value has {} entries, expected {}", m.data.len(), a.len());
                }
                Ok(m.to_array(a.shape()))
            })
            .collect::<Result<Vec<_>>>()?;
        like.with_arrays(arrays)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) * op(b)` with optional transposes.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let v = gemm(self.val(a.0), self.val(b.0), ta, tb);
        self.push(Op::MatMul { a: a.0, b: b.0, ta, tb }, v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.val(a.0).zip(self.val(b.0), |x, y| x + y);
        self.push(Op::Add(a.0, b.0), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.val(a.0).zip(self.val(b.0), |x, y| x - y);
        self.push(Op::Sub(a.0, b.0), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.val(a.0).zip(self.val(b.0), |x, y| x * y);
        self.push(Op::Mul(a.0, b.0), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.val(a.0).map(|x| x * c);
        self.push(Op::Scale(a.0, c), v)
    }

    /// `a + c * b`.
    pub fn axpy(&mut self, a: Var, b: Var, c: f64) -> Var {
        let cb = self.scale(b, c);
        self.add(a, cb)
    }

    /// Adds a `1 x m` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (am, rm) = (self.val(a.0), self.val(row.0));
        assert_eq!(rm.rows, 1, "bias must be a single row");
        assert_eq!(am.cols, rm.cols, "bias width mismatch");
        let mut out = am.clone();
        for r in 0..out.rows {
            for (o, b) in out.data[r * out.cols..(r + 1) * out.cols].iter_mut().zip(&rm.data) {
                *o += b;
            }
        }
        self.push(Op::AddRow(a.0, row.0), out)
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let am = self.val(a.0);
        let mut out = Mat::zeros(1, am.cols);
        for r in 0..am.rows {
            for (o, x) in out.data.iter_mut().zip(am.row(r)) {
                *o += x;
            }
        }
        self.push(Op::SumRows(a.0), out)
    }

    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let am = self.val(a.0);
        assert_eq!(am.rows, 1, "broadcast_rows needs a single row");
        let mut data = Vec::with_capacity(rows * am.cols);
        for _ in 0..rows {
            data.extend_from_slice(&am.data);
        }
        let out = Mat::new(rows, am.cols, data);
        self.push(Op::BroadcastRows(a.0), out)
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let am = self.val(a.0);
        let data = (0..am.rows).map(|r| am.row(r).iter().sum()).collect();
        let out = Mat::new(am.rows, 1, data);
        self.push(Op::SumCols(a.0), out)
    }

    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Var {
        let am = self.val(a.0);
        assert_eq!(am.cols, 1, "broadcast_cols needs a single column");
        let mut data = Vec::with_capacity(am.rows * cols);
        for &v in &am.data {
            data.extend(core::iter::repeat(v).take(cols));
        }
        let out = Mat::new(am.rows, cols, data);
        self.push(Op::BroadcastCols(a.0), out)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.val(a.0).data.iter().sum();
        self.push(Op::SumAll(a.0), Mat::new(1, 1, vec![s]))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.val(a.0).data.len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Expands a 1x1 node to `rows x cols`.
    pub fn expand(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let am = self.val(a.0);
        assert_eq!(am.data.len(), 1, "expand needs a scalar");
        let out = Mat::filled(rows, cols, am.data[0]);
        self.push(Op::Expand(a.0), out)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.val(a.0).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu(a.0), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.val(a.0).map(math::tanh);
        self.push(Op::Tanh(a.0), v)
    }

    /// `1 - a^2` elementwise.
    pub fn one_minus_square(&mut self, a: Var) -> Var {
        let v = self.val(a.0).map(|x| 1.0 - x * x);
        self.push(Op::OneMinusSquare(a.0), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.val(a.0).map(math::exp);
        self.push(Op::Exp(a.0), v)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let am = self.val(a.0);
        let mut out = am.clone();
        for r in 0..am.rows {
            let lse = math::log_sum_exp(am.row(r));
            for v in &mut out.data[r * am.cols..(r + 1) * am.cols] {
                *v -= lse;
            }
        }
        self.push(Op::LogSoftmax(a.0), out)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.val(parts[0].0).rows;
        let cols: usize = parts.iter().map(|p| self.val(p.0).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                let m = self.val(p.0);
                assert_eq!(m.rows, rows, "concat row mismatch");
                data.extend_from_slice(m.row(r));
            }
        }
        let out = Mat::new(rows, cols, data);
        self.push(Op::ConcatCols(parts.iter().map(|p| p.0).collect()), out)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let am = self.val(a.0);
        assert!(start + width <= am.cols, "column slice out of range");
        let mut data = Vec::with_capacity(am.rows * width);
        for r in 0..am.rows {
            data.extend_from_slice(&am.row(r)[start..start + width]);
        }
        let out = Mat::new(am.rows, width, data);
        self.push(Op::SliceCols { a: a.0, start }, out)
    }

    /// Places `a` at column `start` inside a zero matrix of `total` columns.
    pub fn pad_cols(&mut self, a: Var, start: usize, total: usize) -> Var {
        let am = self.val(a.0);
        assert!(start + am.cols <= total, "padding out of range");
        let mut out = Mat::zeros(am.rows, total);
        for r in 0..am.rows {
            out.data[r * total + start..r * total + start + am.cols].copy_from_slice(am.row(r));
        }
        self.push(Op::PadCols { a: a.0, start }, out)
    }

    /// Mean weighted softmax cross-entropy of row-wise `logits` against
    /// integer `labels`, divided by the number of rows.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize], weights: &[f64]) -> Var {
        let (rows, cols) = {
            let m = self.val(logits.0);
            (m.rows, m.cols)
        };
        assert_eq!(labels.len(), rows, "one label per row");
        assert_eq!(weights.len(), rows, "one weight per row");
        let mut target = Mat::zeros(rows, cols);
        for (r, (&y, &w)) in labels.iter().zip(weights).enumerate() {
            assert!(y < cols, "label out of range");
            target.data[r * cols + y] = w;
        }
        let logp = self.log_softmax(logits);
        let t = self.constant(target);
        let picked = self.mul(logp, t);
        let s = self.sum(picked);
        self.scale(s, -1.0 / rows as f64)
    }

    /// Gradient of the scalar `root` with respect to each of `wrt`.
    ///
    /// The backward pass is recorded on this tape, so the returned variables
    /// can themselves be differentiated. Variables `root` does not depend on
    /// get a zero gradient.
    pub fn grad(&mut self, root: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let rv = self.val(root.0);
        if rv.rows != 1 || rv.cols != 1 {
            bail!(Autodiff, "gradient root must be a scalar, got {}x{}", rv.rows, rv.cols);
        }
        let n = root.0 + 1;
        let mut depends = vec![false; n];
        let mut start = n;
        for w in wrt {
            if w.0 < n {
                depends[w.0] = true;
                start = start.min(w.0);
            }
        }
        for i in start..n {
            if !depends[i] {
                depends[i] = self.nodes[i].op.parents().iter().any(|&p| depends[p]);
            }
        }

        let mut grads: Vec<Option<Var>> = vec![None; n];
        if depends[root.0] {
            grads[root.0] = Some(self.constant(Mat::filled(1, 1, 1.0)));
        }
        for i in (start..n).rev() {
            if !depends[i] {
                continue;
            }
            let Some(g) = grads[i] else { continue };
            let op = self.nodes[i].op.clone();
            for (p, gp) in self.backward_rule(&op, i, g, &depends) {
                grads[p] = Some(match grads[p] {
                    Some(acc) => self.add(acc, gp),
                    None => gp,
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|w| match grads.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let m = self.val(w.0);
                    let z = Mat::zeros(m.rows, m.cols);
                    self.constant(z)
                }
            })
            .collect())
    }

    /// Contributions of node `i` (with upstream gradient `g`) to its parents.
    fn backward_rule(&mut self, op: &Op, i: usize, g: Var, depends: &[bool]) -> Vec<(usize, Var)> {
        use Op::*;
        let mut out = Vec::with_capacity(2);
        let want = |p: usize| depends[p];
        match *op {
            Leaf | Const => {}
            MatMul { a, b, ta, tb } => {
                if want(a) {
                    let ga = if ta {
                        self.matmul_t(Var(b), g, tb, true)
                    } else {
                        self.matmul_t(g, Var(b), false, !tb)
                    };
                    out.push((a, ga));
                }
                if want(b) {
                    let gb = if tb {
                        self.matmul_t(g, Var(a), true, ta)
                    } else {
                        self.matmul_t(Var(a), g, !ta, false)
                    };
                    out.push((b, gb));
                }
            }
            Add(a, b) => {
                if want(a) {
                    out.push((a, g));
                }
                if want(b) {
                    out.push((b, g));
                }
            }
            Sub(a, b) => {
                if want(a) {
                    out.push((a, g));
                }
                if want(b) {
                    let neg = self.scale(g, -1.0);
                    out.push((b, neg));
                }
            }
            Mul(a, b) => {
                if want(a) {
                    let ga = self.mul(g, Var(b));
                    out.push((a, ga));
                }
                if want(b) {
                    let gb = self.mul(g, Var(a));
                    out.push((b, gb));
                }
            }
            Scale(a, c) => {
                let ga = self.scale(g, c);
                out.push((a, ga));
            }
            AddRow(a, b) => {
                if want(a) {
                    out.push((a, g));
                }
                if want(b) {
                    let gb = self.sum_rows(g);
                    out.push((b, gb));
                }
            }
            SumRows(a) => {
                let rows = self.val(a).rows;
                let ga = self.broadcast_rows(g, rows);
                out.push((a, ga));
            }
            BroadcastRows(a) => {
                let ga = self.sum_rows(g);
                out.push((a, ga));
            }
            SumCols(a) => {
                let cols = self.val(a).cols;
                let ga = self.broadcast_cols(g, cols);
                out.push((a, ga));
            }
            BroadcastCols(a) => {
                let ga = self.sum_cols(g);
                out.push((a, ga));
            }
            SumAll(a) => {
                let (r, c) = (self.val(a).rows, self.val(a).cols);
                let ga = self.expand(g, r, c);
                out.push((a, ga));
            }
            Expand(a) => {
                let ga = self.sum(g);
                out.push((a, ga));
            }
            Relu(a) => {
                // d/dx relu is a step function whose own derivative is zero
                // almost everywhere, so the mask enters as a constant.
                let mask = self.val(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                let m = self.constant(mask);
                let ga = self.mul(g, m);
                out.push((a, ga));
            }
            Tanh(a) => {
                let d = self.one_minus_square(Var(i));
                let ga = self.mul(g, d);
                out.push((a, ga));
            }
            OneMinusSquare(a) => {
                let d = self.scale(Var(a), -2.0);
                let ga = self.mul(g, d);
                out.push((a, ga));
            }
            Exp(a) => {
                let ga = self.mul(g, Var(i));
                out.push((a, ga));
            }
            LogSoftmax(a) => {
                let cols = self.val(i).cols;
                let probs = self.exp(Var(i));
                let row_sums = self.sum_cols(g);
                let spread = self.broadcast_cols(row_sums, cols);
                let t = self.mul(probs, spread);
                let ga = self.sub(g, t);
                out.push((a, ga));
            }
            ConcatCols(ref parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.val(p).cols;
                    if want(p) {
                        let gp = self.slice_cols(g, offset, w);
                        out.push((p, gp));
                    }
                    offset += w;
                }
            }
            SliceCols { a, start } => {
                let total = self.val(a).cols;
                let ga = self.pad_cols(g, start, total);
                out.push((a, ga));
            }
            PadCols { a, start } => {
                let w = self.val(a).cols;
                let ga = self.slice_cols(g, start, w);
                out.push((a, ga));
            }
        }
        out
    }
}

/// Whether meta-gradients keep the second-order terms of the inner loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradOrder {
    Second,
    /// Treats each inner gradient as a constant (drops Hessian terms).
    First,
}

/// Gradient of a scalar expression built by `loss` over `params`.
pub fn grad<F>(params: &ParamSet, loss: F) -> Result<(f64, ParamSet)>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = tape.leaves(params)?;
    let root = loss(&mut tape, &vars)?;
    let g = tape.grad(root, &vars)?;
    Ok((tape.scalar(root), tape.to_params(params, &g)?))
}

/// Runs `steps` plain gradient-descent steps of `loss` starting at `params`,
/// keeping every step on the tape.
pub fn unroll_descent<F>(
    tape: &mut Tape,
    params: &[Var],
    steps: usize,
    lr: f64,
    order: GradOrder,
    mut loss: F,
) -> Result<Vec<Var>>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut current = params.to_vec();
    for _ in 0..steps {
        let l = loss(tape, &current)?;
        let grads = tape.grad(l, &current)?;
        current = current
            .iter()
            .zip(grads)
            .map(|(&p, g)| {
                let g = match order {
                    GradOrder::Second => g,
                    GradOrder::First => tape.detach(g),
                };
                tape.axpy(p, g, -lr)
            })
            .collect();
    }
    Ok(current)
}

/// Derivative of `outer(theta')` with respect to `init`, where `theta'` is
/// `init` after `steps` gradient-descent steps of `inner` at rate `lr`.
///
/// Returns the outer loss value and the meta-gradient.
pub fn meta_grad<I, O>(
    init: &ParamSet,
    steps: usize,
    lr: f64,
    order: GradOrder,
    inner: I,
    outer: O,
) -> Result<(f64, ParamSet)>
where
    I: FnMut(&mut Tape, &[Var]) -> Result<Var>,
    O: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let theta = tape.leaves(init)?;
    let adapted = unroll_descent(&mut tape, &theta, steps, lr, order, inner)?;
    let root = outer(&mut tape, &adapted)?;
    let g = tape.grad(root, &theta)?;
    let value = tape.scalar(root);
    if !value.is_finite() {
        bail!(Autodiff, "{}", format!("outer loss is not finite: {}", value));
    }
    Ok((value, tape.to_params(init, &g)?))
}
