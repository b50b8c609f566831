//! Reverse-mode automatic differentiation over dense matrices.
//!
//! Operations are appended to a [`Tape`] in evaluation order, so node ids are
//! already a topological order. [`Tape::backward`] walks the nodes once in
//! reverse, accumulating gradients into every input that requires one. Leaves
//! created with [`Tape::constant`] (and everything computed only from
//! constants) are skipped, which is how a frozen backbone avoids paying for
//! weight gradients while still passing gradients through to prompts.

use std::rc::Rc;

use super::matrix::{gemm, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        input: Var,
        gain: Var,
        bias: Var,
        normalized: Matrix,
        inv_std: Vec<f64>,
    },
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Gather(Var, Vec<usize>),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Matrix,
        count: usize,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros when nothing flowed into it.
    pub fn wrt(&self, v: Var) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| {
            let (r, c) = self.shapes[v.0];
            Matrix::zeros(r, c)
        })
    }

    pub fn take(&mut self, v: Var) -> Matrix {
        self.grads[v.0].take().unwrap_or_else(|| {
            let (r, c) = self.shapes[v.0];
            Matrix::zeros(r, c)
        })
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), g))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_t(self.value(b))?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMulT(a, b), g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), g))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let value = self.value(a).add_row(self.value(bias))?;
        let g = self.any_grad(&[a, bias]);
        Ok(self.push(value, Op::AddRow(a, bias), g))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::Shape {
                op: "mul",
                left: x.shape(),
                right: y.shape(),
            });
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Matrix::from_vec(x.rows(), x.cols(), data)?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), g))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scaled(s);
        let g = self.any_grad(&[a]);
        self.push(value, Op::Scale(a, s), g)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(gelu);
        let g = self.any_grad(&[a]);
        self.push(value, Op::Gelu(a), g)
    }

    pub fn softmax_rows(&mut self, a: Var, allowed: Option<&Rc<[bool]>>) -> Var {
        let value = self
            .value(a)
            .softmax_rows_masked(allowed.map(|m| m.as_ref()));
        let g = self.any_grad(&[a]);
        self.push(value, Op::Softmax(a), g)
    }

    pub fn layer_norm(&mut self, input: Var, gain: Var, bias: Var) -> Result<Var> {
        let (value, normalized, inv_std) = self
            .value(input)
            .layer_norm(self.value(gain), self.value(bias))?;
        let g = self.any_grad(&[input, gain, bias]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                input,
                gain,
                bias,
                normalized,
                inv_std,
            },
            g,
        ))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice_rows(start, len);
        let g = self.any_grad(&[a]);
        self.push(value, Op::SliceRows(a, start), g)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice_cols(start, len);
        let g = self.any_grad(&[a]);
        self.push(value, Op::SliceCols(a, start), g)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Matrix::concat_rows(&mats)?;
        let g = self.any_grad(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), g))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Matrix::concat_cols(&mats)?;
        let g = self.any_grad(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), g))
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::Shape {
                op: "gather_rows",
                left: t.shape(),
                right: (bad, 1),
            });
        }
        let mut data = Vec::with_capacity(ids.len() * t.cols());
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let value = Matrix::from_vec(ids.len(), t.cols(), data)?;
        let g = self.any_grad(&[table]);
        Ok(self.push(value, Op::Gather(table, ids.to_vec()), g))
    }

    /// Mean over masked-in rows of `-log softmax(logits)[target]`, as a 1×1 node.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let l = self.value(logits);
        if targets.len() != l.rows() || mask.len() != l.rows() {
            return Err(Error::Shape {
                op: "cross_entropy",
                left: l.shape(),
                right: (targets.len(), mask.len()),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= l.cols()) {
            return Err(Error::Shape {
                op: "cross_entropy",
                left: l.shape(),
                right: (bad, 1),
            });
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::DegenerateBatch);
        }
        let probs = l.softmax_rows();
        let mut total = 0.0;
        for r in (0..l.rows()).filter(|&r| mask[r]) {
            total -= l.log_softmax_row(r)[targets[r]];
        }
        let value = Matrix::filled(1, 1, total / count as f64);
        let g = self.any_grad(&[logits]);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
            g,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        let g = self.any_grad(&[a]);
        self.push(value, Op::Sum(a), g)
    }

    /// Back-propagates from a 1×1 node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, op: &Op, out: &Matrix, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    let bv = self.value(*b);
                    gemm_acc(grads, *a, self.value(*a).shape(), |dst, beta| {
                        gemm(g, false, bv, true, dst, beta)
                    });
                }
                if self.wants(*b) {
                    let av = self.value(*a);
                    gemm_acc(grads, *b, self.value(*b).shape(), |dst, beta| {
                        gemm(av, true, g, false, dst, beta)
                    });
                }
            }
            Op::MatMulT(a, b) => {
                if self.wants(*a) {
                    let bv = self.value(*b);
                    gemm_acc(grads, *a, self.value(*a).shape(), |dst, beta| {
                        gemm(g, false, bv, false, dst, beta)
                    });
                }
                if self.wants(*b) {
                    let av = self.value(*a);
                    gemm_acc(grads, *b, self.value(*b).shape(), |dst, beta| {
                        gemm(g, true, av, false, dst, beta)
                    });
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        accumulate(grads, v, g);
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g);
                }
                if self.wants(*bias) {
                    accumulate(grads, *bias, &column_sums(g));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    accumulate(grads, *a, &hadamard(g, bv));
                }
                if self.wants(*b) {
                    accumulate(grads, *b, &hadamard(g, av));
                }
            }
            Op::Scale(a, s) => {
                if self.wants(*a) {
                    accumulate(grads, *a, &g.scaled(*s));
                }
            }
            Op::Gelu(a) => {
                if self.wants(*a) {
                    let x = self.value(*a);
                    let d: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(gi, xi)| gi * gelu_grad(*xi))
                        .collect();
                    accumulate(grads, *a, &Matrix::from_vec(x.rows(), x.cols(), d).unwrap());
                }
            }
            Op::Softmax(a) => {
                if self.wants(*a) {
                    let mut d = Matrix::zeros(out.rows(), out.cols());
                    for r in 0..out.rows() {
                        let (y, gr) = (out.row(r), g.row(r));
                        let dot: f64 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for (c, dv) in d.row_mut(r).iter_mut().enumerate() {
                            *dv = y[c] * (gr[c] - dot);
                        }
                    }
                    accumulate(grads, *a, &d);
                }
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let gain_v = self.value(*gain);
                if self.wants(*gain) {
                    accumulate(grads, *gain, &column_sums(&hadamard(g, normalized)));
                }
                if self.wants(*bias) {
                    accumulate(grads, *bias, &column_sums(g));
                }
                if self.wants(*input) {
                    let n = out.cols() as f64;
                    let mut d = Matrix::zeros(out.rows(), out.cols());
                    for r in 0..out.rows() {
                        let xhat = normalized.row(r);
                        let dxhat: Vec<f64> = g
                            .row(r)
                            .iter()
                            .zip(gain_v.data())
                            .map(|(a, b)| a * b)
                            .collect();
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum();
                        let k = inv_std[r] / n;
                        for (c, dv) in d.row_mut(r).iter_mut().enumerate() {
                            *dv = k * (n * dxhat[c] - s1 - xhat[c] * s2);
                        }
                    }
                    accumulate(grads, *input, &d);
                }
            }
            Op::SliceRows(a, start) => {
                if self.wants(*a) {
                    let dst = slot(grads, *a, self.value(*a).shape());
                    let cols = dst.cols();
                    let off = start * cols;
                    for (p, q) in dst.data_mut()[off..off + g.len()].iter_mut().zip(g.data()) {
                        *p += q;
                    }
                }
            }
            Op::SliceCols(a, start) => {
                if self.wants(*a) {
                    let dst = slot(grads, *a, self.value(*a).shape());
                    for r in 0..g.rows() {
                        let row = &mut dst.row_mut(r)[*start..start + g.cols()];
                        for (p, q) in row.iter_mut().zip(g.row(r)) {
                            *p += q;
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut row = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    if self.wants(p) && rows > 0 {
                        accumulate(grads, p, &g.slice_rows(row, rows));
                    }
                    row += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut col = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    if self.wants(p) {
                        accumulate(grads, p, &g.slice_cols(col, cols));
                    }
                    col += cols;
                }
            }
            Op::Gather(table, ids) => {
                if self.wants(*table) {
                    let dst = slot(grads, *table, self.value(*table).shape());
                    for (r, &i) in ids.iter().enumerate() {
                        for (p, q) in dst.row_mut(i).iter_mut().zip(g.row(r)) {
                            *p += q;
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                probs,
                count,
            } => {
                if self.wants(*logits) {
                    let scale = g.get(0, 0) / *count as f64;
                    let mut d = Matrix::zeros(probs.rows(), probs.cols());
                    for r in (0..probs.rows()).filter(|&r| mask[r]) {
                        let dst = d.row_mut(r);
                        for (c, v) in dst.iter_mut().enumerate() {
                            *v = probs.get(r, c) * scale;
                        }
                        dst[targets[r]] -= scale;
                    }
                    accumulate(grads, *logits, &d);
                }
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    let (r, c) = self.value(*a).shape();
                    accumulate(grads, *a, &Matrix::filled(r, c, g.get(0, 0)));
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Matrix>], v: Var, shape: (usize, usize)) -> &mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: &Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(g),
        empty => *empty = Some(g.clone()),
    }
}

fn gemm_acc(
    grads: &mut [Option<Matrix>],
    v: Var,
    shape: (usize, usize),
    f: impl FnOnce(&mut Matrix, f64),
) {
    match &mut grads[v.0] {
        Some(existing) => f(existing, 1.0),
        empty => {
            let mut m = Matrix::zeros(shape.0, shape.1);
            f(&mut m, 0.0);
            *empty = Some(m);
        }
    }
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(p, q)| p * q).collect();
    Matrix::from_vec(a.rows(), a.cols(), data).unwrap()
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
