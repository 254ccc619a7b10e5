//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every primitive applied to its [`Var`] handles. Nodes
//! are appended in evaluation order, so parents always precede children and
//! the backward sweep is a single reverse pass.
//!
//! ```
//! use dipnet_core::autodiff::Tape;
//! use dipnet_core::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::scalar(3.0));
//! let y = tape.square(x);
//! let grads = tape.gradient(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item().unwrap(), 6.0);
//! ```
//!
//! Kinks use the zero branch: the derivative of `relu` at 0 is 0, and
//! `max_with(x, c)` / `min_with(x, c)` pass no gradient to `x` when `x == c`.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Tanh(Var),
    MaxWith(Var, f64),
    MinWith(Var, f64),
    Square(Var),
    Exp(Var),
    Recip(Var),
    Softplus(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SumCols(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Arc<[usize]>),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    trainable: bool,
}

/// Records primitive operations for a later backward sweep.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    tracing: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar output with respect to the trainable leaves.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_var: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.by_var.get(&v)
    }

    /// Gradient for `v`, zeros shaped like `like` when `v` did not influence the output.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.by_var
            .get(&v)
            .cloned()
            .unwrap_or_else(|| Tensor::raw_like(like, vec![0.0; like.len()]))
    }

    pub fn len(&self) -> usize {
        self.by_var.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_var.is_empty()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn same_dims(a: &Tensor, b: &Tensor) -> bool {
    a.rows() == b.rows() && a.cols() == b.cols()
}

fn with_shape_of(like: &Tensor, data: Vec<f64>) -> Tensor {
    Tensor::raw_like(like, data)
}

impl Tape {
    /// A tape that records operations for differentiation.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            tracing: true,
        }
    }

    /// A tape that only evaluates; [`Tape::gradient`] returns no gradients.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            tracing: false,
        }
    }

    pub fn is_tracing(&self) -> bool {
        self.tracing
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = self.tracing && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            trainable: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// A trainable leaf; gradients are reported for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: self.tracing,
            trainable: self.tracing,
        });
        Var(self.nodes.len() - 1)
    }

    /// Copies the value of `v` into a new constant leaf, cutting the gradient path.
    pub fn stop_gradient(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`, the layout used by dense layers storing weights as `out × in`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(value, Op::MatMulT(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a), &[a])
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !same_dims(ta, tb) {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::raw(ta.rows(), ta.cols(), data);
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a row vector (`1 × n` or length `n`) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let value = self.value(a).add_row(self.value(row))?;
        Ok(self.push(value, Op::AddRow(a, row), &[a, row]))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        self.push(value, op, &[a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// `a + c` element-wise.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::Offset(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn max_with(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x.max(c), Op::MaxWith(a, c))
    }

    pub fn min_with(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x.min(c), Op::MinWith(a, c))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    /// `1 / a` element-wise.
    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(a, f64::recip, Op::Recip(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    /// Sum of all entries, as a `1 × 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).mean());
        self.push(value, Op::Mean(a), &[a])
    }

    /// Sums across columns: `m × n → m × 1`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows()).map(|i| t.row(i).iter().sum()).collect();
        let value = Tensor::raw(t.rows(), 1, data);
        self.push(value, Op::SumRows(a), &[a])
    }

    /// Sums down rows: `m × n → 1 × n`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut data = vec![0.0; t.cols()];
        for i in 0..t.rows() {
            for (acc, v) in data.iter_mut().zip(t.row(i)) {
                *acc += v;
            }
        }
        let value = Tensor::raw(1, t.cols(), data);
        self.push(value, Op::SumCols(a), &[a])
    }

    /// Column-wise concatenation of tensors with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for p in parts {
            let t = self.value(*p);
            if t.rows() != rows {
                return Err(mismatch("concat", self.value(*first), t));
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(i));
            }
        }
        let value = Tensor::raw(rows, cols, data);
        Ok(self.push(value, Op::Concat(parts.to_vec()), parts))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if start >= end || end > t.cols() {
            return Err(Error::InvalidArgument(format!(
                "column slice {start}..{end} out of range for {:?}",
                t.shape()
            )));
        }
        let mut data = Vec::with_capacity(t.rows() * (end - start));
        for i in 0..t.rows() {
            data.extend_from_slice(&t.row(i)[start..end]);
        }
        let value = Tensor::raw(t.rows(), end - start, data);
        Ok(self.push(value, Op::SliceCols(a, start), &[a]))
    }

    /// Builds a tensor whose row `i` is row `idx[i]` of `a`; the backward
    /// pass scatter-adds, so repeated indices accumulate.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var> {
        let t = self.value(a);
        if idx.is_empty() {
            return Err(Error::InvalidArgument("gather_rows with no indices".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::InvalidArgument(format!(
                "gather_rows index {bad} out of range for {} rows",
                t.rows()
            )));
        }
        let value = t.select_rows(&idx);
        Ok(self.push(value, Op::GatherRows(a, idx), &[a]))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.value(a).clone().reshaped(rows, cols)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// `|a|` as `max(a, 0) - min(a, 0)`.
    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let p = self.max_with(a, 0.0);
        let n = self.min_with(a, 0.0);
        self.sub(p, n)
    }

    /// Element-wise `min(a, b)` as `a - relu(a - b)`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let r = self.relu(d);
        self.sub(a, r)
    }

    /// Element-wise `max(a, b)` as `b + relu(a - b)`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let r = self.relu(d);
        self.add(b, r)
    }

    /// Reverse sweep from a scalar `output`.
    pub fn gradient(&self, output: Var) -> Result<Gradients> {
        let out = &self.nodes[output.0].value;
        if out.len() != 1 {
            return Err(Error::NonScalarOutput(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(with_shape_of(out, vec![1.0]));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let by_var = grads
            .into_iter()
            .enumerate()
            .filter_map(|(i, g)| {
                let node = &self.nodes[i];
                match (node.trainable, g) {
                    (true, Some(g)) => Some((Var(i), g)),
                    _ => None,
                }
            })
            .collect();
        Ok(Gradients { by_var })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, data: Vec<f64>) {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(&data) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(with_shape_of(&node.value, data)),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let elementwise = |v: Var, f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
            let x = self.value(v).data();
            gd.iter().zip(x).map(|(&g, &x)| f(g, x)).collect()
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, gd, false, tb.data(), true, &mut da, 0.0);
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), true, gd, false, &mut db, 0.0);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::MatMulT(a, b) => {
                // C (m×n) = A (m×k) · Bᵀ, B is n×k
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, gd, false, tb.data(), false, &mut da, 0.0);
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; n * k];
                    gemm(n, m, k, gd, true, ta.data(), false, &mut db, 0.0);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Transpose(a) => {
                self.accumulate(grads, *a, g.transpose().into_data());
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let d = elementwise(*b, &|g, y| g * y);
                    self.accumulate(grads, *a, d);
                }
                if self.needs(*b) {
                    let d = elementwise(*a, &|g, x| g * x);
                    self.accumulate(grads, *b, d);
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, gd.to_vec());
                if self.needs(*row) {
                    let c = g.cols();
                    let mut d = vec![0.0; c];
                    for r in 0..g.rows() {
                        for (acc, v) in d.iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, *row, d);
                }
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, gd.iter().map(|v| c * v).collect());
            }
            Op::Offset(a) => self.accumulate(grads, *a, gd.to_vec()),
            Op::Relu(a) => {
                let d = elementwise(*a, &|g, x| if x > 0.0 { g } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = elementwise(*a, &|g, x| {
                    let t = x.tanh();
                    g * (1.0 - t * t)
                });
                self.accumulate(grads, *a, d);
            }
            Op::MaxWith(a, c) => {
                let d = elementwise(*a, &|g, x| if x > *c { g } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::MinWith(a, c) => {
                let d = elementwise(*a, &|g, x| if x < *c { g } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::Square(a) => {
                let d = elementwise(*a, &|g, x| 2.0 * x * g);
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(g, y)| g * y).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Recip(a) => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(g, y)| -g * y * y).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Softplus(a) => {
                let d = elementwise(*a, &|g, x| g * sigmoid(x));
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![gd[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![gd[0] / n as f64; n]);
            }
            Op::SumRows(a) => {
                let t = self.value(*a);
                let c = t.cols();
                let d = (0..t.len()).map(|i| gd[i / c]).collect();
                self.accumulate(grads, *a, d);
            }
            Op::SumCols(a) => {
                let t = self.value(*a);
                let c = t.cols();
                let d = (0..t.len()).map(|i| gd[i % c]).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let pc = self.value(*p).cols();
                    if self.needs(*p) {
                        let mut d = Vec::with_capacity(g.rows() * pc);
                        for r in 0..g.rows() {
                            d.extend_from_slice(&g.row(r)[offset..offset + pc]);
                        }
                        self.accumulate(grads, *p, d);
                    }
                    offset += pc;
                }
            }
            Op::SliceCols(a, start) => {
                let t = self.value(*a);
                let (rows, cols) = (t.rows(), t.cols());
                let w = g.cols();
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    d[r * cols + start..r * cols + start + w].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *a, d);
            }
            Op::GatherRows(a, idx) => {
                let t = self.value(*a);
                let c = t.cols();
                let mut d = vec![0.0; t.len()];
                for (r, &src) in idx.iter().enumerate() {
                    for (acc, v) in d[src * c..(src + 1) * c].iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Reshape(a) => self.accumulate(grads, *a, gd.to_vec()),
        }
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for positive arguments.
#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    assert!(y > 0.0, "softplus_inv needs a positive argument");
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn relu_and_clamps() {
        let mut tape = Tape::new();
        let x = tape.constant(t(1, 3, &[-1.0, 0.0, 2.0]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let y = tape.constant(t(1, 2, &[-1.0, 2.0]));
        let m = tape.max_with(y, 0.0);
        assert_eq!(tape.value(m).data(), &[0.0, 2.0]);
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.square(x);
        let g = tape.gradient(y).unwrap();
        assert_eq!(g.get(x).unwrap().item().unwrap(), 6.0);
    }

    #[test]
    fn recip_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(4.0));
        let y = tape.recip(x);
        assert_eq!(tape.value(y).item().unwrap(), 0.25);
        let g = tape.gradient(y).unwrap();
        assert_eq!(g.get(x).unwrap().item().unwrap(), -1.0 / 16.0);
    }

    #[test]
    fn relu_subgradients() {
        for (x0, expect) in [(-1.0, 0.0), (0.0, 0.0), (2.0, 1.0)] {
            let mut tape = Tape::new();
            let x = tape.param(Tensor::scalar(x0));
            let y = tape.relu(x);
            let g = tape.gradient(y).unwrap();
            assert_eq!(g.get(x).unwrap().item().unwrap(), expect, "at x = {x0}");
        }
    }

    #[test]
    fn ties_in_clamps_take_constant_branch() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(1.5));
        let a = tape.max_with(x, 1.5);
        let b = tape.min_with(x, 1.5);
        let s = tape.add(a, b).unwrap();
        let g = tape.gradient(s).unwrap();
        assert_eq!(g.get(x).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(t(1, 2, &[1.0, 2.0]));
        let y = tape.square(x);
        assert!(matches!(tape.gradient(y), Err(Error::NonScalarOutput(_))));
    }

    #[test]
    fn shape_errors_are_structured() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(3, 2));
        match tape.add(a, b) {
            Err(Error::ShapeMismatch { op, lhs, rhs }) => {
                assert_eq!(op, "add");
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![3, 2]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stop_gradient_detaches() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let y = tape.square(x);
        let c = tape.stop_gradient(y);
        let z = tape.mul(c, x).unwrap();
        let g = tape.gradient(z).unwrap();
        // d/dx (stop(x²) · x) = x² = 4, not 3x² = 12
        assert_eq!(g.get(x).unwrap().item().unwrap(), 4.0);
    }

    #[test]
    fn gather_accumulates_repeated_rows() {
        let mut tape = Tape::new();
        let x = tape.param(t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let idx: Arc<[usize]> = Arc::from(vec![0usize, 0, 1]);
        let y = tape.gather_rows(x, idx).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 1.0, 2.0, 3.0, 4.0]);
        let s = tape.sum(y);
        let g = tape.gradient(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn inference_tape_records_no_gradients() {
        let mut tape = Tape::inference();
        let x = tape.param(Tensor::scalar(2.0));
        let y = tape.square(x);
        assert_eq!(tape.value(y).item().unwrap(), 4.0);
        assert!(tape.gradient(y).unwrap().is_empty());
    }

    #[test]
    fn softplus_round_trip() {
        for y in [1e-4, 0.01, 1.0, 5.0, 50.0] {
            assert!((softplus(softplus_inv(y)) - y).abs() < 1e-10 * y.max(1.0));
        }
    }
}
