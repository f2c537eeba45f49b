//! Dynamically recorded computation graph with reverse-mode differentiation.
//!
//! Every operation evaluates eagerly and appends a node to the tape. Nodes are
//! only ever appended, so the tape is already in topological order and
//! [`Graph::backward`] is a single reverse sweep.

use std::collections::HashMap;

use super::matrix::{self, Matrix};
use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Affine(Var, f64),
    ScaleBy(Var, Var),
    Transpose(Var),
    Softmax(Var),
    NormalizeRows(Var, Vec<f64>),
    Gelu(Var),
    Relu(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    MaxAll(Var, usize),
    MeanRows(Var),
    MaxRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Select(Var, usize, usize),
    CrossEntropy(Var, usize, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> Error {
    Error::Shape {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Records a non-differentiable input.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Brings a parameter onto the tape. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = matrix::matmul(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(op, x, y));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    fn row_broadcast_check(&self, op: &'static str, a: Var, row: Var) -> Result<()> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(shape_err(op, x, r));
        }
        Ok(())
    }

    /// `a + row` with the 1 x c row broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast_check("add_row", a, row)?;
        let mut value = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..value.rows() {
            for (v, b) in value.row_mut(i).iter_mut().zip(&r) {
                *v += b;
            }
        }
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    /// `a ⊙ row` with the 1 x c row broadcast over every row of `a`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast_check("mul_row", a, row)?;
        let mut value = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..value.rows() {
            for (v, g) in value.row_mut(i).iter_mut().zip(&r) {
                *v *= g;
            }
        }
        Ok(self.push(value, Op::MulRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.affine(a, factor, 0.0)
    }

    /// Elementwise `factor · a + offset`.
    pub fn affine(&mut self, a: Var, factor: f64, offset: f64) -> Var {
        let value = self.value(a).map(|x| factor * x + offset);
        self.push(value, Op::Affine(a, factor))
    }

    /// Multiplies every entry of `a` by the 1x1 node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            return Err(shape_err("scale_by", self.value(a), self.value(s)));
        }
        let k = self.value(s).item();
        let value = self.value(a).map(|x| x * k);
        Ok(self.push(value, Op::ScaleBy(a, s)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = matrix::softmax_rows(self.value(a));
        self.push(value, Op::Softmax(a))
    }

    /// Per-row standardisation `(x - mean) / sqrt(var + eps)` without affine terms.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let n = x.cols() as f64;
        let mut value = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows());
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
            inv_std.push(inv);
        }
        self.push(value, Op::NormalizeRows(a, inv_std))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .map(|x| 0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh()));
        self.push(value, Op::Gelu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let value = Matrix::scalar(x.sum() / x.data().len() as f64);
        self.push(value, Op::Mean(a))
    }

    pub fn max_all(&mut self, a: Var) -> Var {
        let (idx, max) = self
            .value(a)
            .data()
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        self.push(Matrix::scalar(max), Op::MaxAll(a, idx))
    }

    /// Column-wise mean over rows (temporal mean pooling).
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).mean_rows();
        self.push(value, Op::MeanRows(a))
    }

    /// Column-wise max over rows (temporal max pooling).
    pub fn max_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut value = Matrix::filled(1, x.cols(), f64::NEG_INFINITY);
        let mut idx = vec![0; x.cols()];
        for r in 0..x.rows() {
            for (c, &v) in x.row(r).iter().enumerate() {
                if v > value.get(0, c) {
                    value.set(0, c, v);
                    idx[c] = r;
                }
            }
        }
        self.push(value, Op::MaxRows(a, idx))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.cols() || len == 0 {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: x.shape(),
                rhs: (start, len),
            });
        }
        let mut value = Matrix::zeros(x.rows(), len);
        for r in 0..x.rows() {
            value
                .row_mut(r)
                .copy_from_slice(&x.row(r)[start..start + len]);
        }
        Ok(self.push(value, Op::SliceCols(a, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat_cols"))?;
        let rows = self.value(first).rows();
        let mut cols = 0;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(shape_err("concat_cols", self.value(first), self.value(p)));
            }
            cols += self.value(p).cols();
        }
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                value.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Extracts entry (r, c) as a 1x1 node.
    pub fn select(&mut self, a: Var, r: usize, c: usize) -> Var {
        let value = Matrix::scalar(self.value(a).get(r, c));
        self.push(value, Op::Select(a, r, c))
    }

    /// Cross-entropy `-log softmax(logits)[target]` of a 1 x K logit row.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let z = self.value(logits);
        if z.rows() != 1 || target >= z.cols() {
            return Err(Error::Contract(format!(
                "cross_entropy needs a 1xK row and target < K, got {:?} and target {target}",
                z.shape()
            )));
        }
        let probs = matrix::softmax(z.data());
        let max = z.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - z.get(0, target);
        Ok(self.push(Matrix::scalar(loss), Op::CrossEntropy(logits, target, probs)))
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// Row-wise layer normalisation with learnable gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let n = self.normalize_rows(x, eps);
        let scaled = self.mul_row(n, gain)?;
        self.add_row(scaled, bias)
    }

    /// Propagates d(loss)/d(node) back through the tape and accumulates the
    /// result into every reachable parameter's gradient in `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => store.get_mut(*id).gradient.add_assign(&g),
                Op::MatMul(a, b) => {
                    let da = matrix::matmul_nt(&g, self.value(*b))?;
                    let db = matrix::matmul_tn(self.value(*a), &g)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|v| -v));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), |x, y| x * y);
                    let db = g.zip_map(self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddRow(a, row) => {
                    accumulate(&mut grads, *row, column_sums(&g));
                    accumulate(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let r = self.value(*row);
                    let x = self.value(*a);
                    let mut da = g.clone();
                    let mut dr = Matrix::zeros(1, r.cols());
                    for i in 0..g.rows() {
                        for c in 0..g.cols() {
                            da.set(i, c, g.get(i, c) * r.get(0, c));
                            dr.data_mut()[c] += g.get(i, c) * x.get(i, c);
                        }
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *row, dr);
                }
                Op::Affine(a, factor) => {
                    let f = *factor;
                    accumulate(&mut grads, *a, g.map(|v| v * f));
                }
                Op::ScaleBy(a, s) => {
                    let k = self.value(*s).item();
                    let ds = g
                        .data()
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(x, y)| x * y)
                        .sum();
                    accumulate(&mut grads, *a, g.map(|v| v * k));
                    accumulate(&mut grads, *s, Matrix::scalar(ds));
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut dx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for c in 0..y.cols() {
                            dx.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::NormalizeRows(a, inv_std) => {
                    let y = &node.value;
                    let n = y.cols() as f64;
                    let mut dx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let gs: f64 = g.row(r).iter().sum();
                        let gy: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for c in 0..y.cols() {
                            let v = inv_std[r] / n * (n * g.get(r, c) - gs - y.get(r, c) * gy);
                            dx.set(r, c, v);
                        }
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::Gelu(a) => {
                    let dx = g.zip_map(self.value(*a), |gv, x| {
                        let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
                        let dt = (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x);
                        gv * (0.5 * (1.0 + t) + 0.5 * x * dt)
                    });
                    accumulate(&mut grads, *a, dx);
                }
                Op::Relu(a) => {
                    let dx = g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, *a, dx);
                }
                Op::Sigmoid(a) => {
                    let dx = g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y));
                    accumulate(&mut grads, *a, dx);
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    accumulate(&mut grads, *a, Matrix::filled(r, c, g.item()));
                }
                Op::Mean(a) => {
                    let (r, c) = self.shape(*a);
                    let v = g.item() / (r * c) as f64;
                    accumulate(&mut grads, *a, Matrix::filled(r, c, v));
                }
                Op::MaxAll(a, idx) => {
                    let (r, c) = self.shape(*a);
                    let mut dx = Matrix::zeros(r, c);
                    dx.data_mut()[*idx] = g.item();
                    accumulate(&mut grads, *a, dx);
                }
                Op::MeanRows(a) => {
                    let (r, c) = self.shape(*a);
                    let mut dx = Matrix::zeros(r, c);
                    for i in 0..r {
                        for (d, gv) in dx.row_mut(i).iter_mut().zip(g.data()) {
                            *d = gv / r as f64;
                        }
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::MaxRows(a, idx) => {
                    let (r, c) = self.shape(*a);
                    let mut dx = Matrix::zeros(r, c);
                    for (col, &row) in idx.iter().enumerate() {
                        dx.set(row, col, g.get(0, col));
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = self.shape(*a);
                    let mut dx = Matrix::zeros(r, c);
                    for i in 0..r {
                        dx.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        let mut dp = Matrix::zeros(r, c);
                        for i in 0..r {
                            dp.row_mut(i).copy_from_slice(&g.row(i)[off..off + c]);
                        }
                        off += c;
                        accumulate(&mut grads, p, dp);
                    }
                }
                Op::Select(a, r, c) => {
                    let (rows, cols) = self.shape(*a);
                    let mut dx = Matrix::zeros(rows, cols);
                    dx.set(*r, *c, g.item());
                    accumulate(&mut grads, *a, dx);
                }
                Op::CrossEntropy(logits, target, probs) => {
                    let mut dz = Matrix::row_vector(probs);
                    dz.data_mut()[*target] -= 1.0;
                    let k = g.item();
                    dz.data_mut().iter_mut().for_each(|v| *v *= k);
                    accumulate(&mut grads, *logits, dz);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
