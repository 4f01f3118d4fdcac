//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! Every primitive appends one node holding its forward value and the
//! indices of its operands. Because operands always precede their
//! consumers, append order is a topological order and [`Tape::backward`]
//! only has to walk the nodes once, in reverse.

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    AddScalar(Var),
    Scale(Var, f64),
    RowSoftmax(Var),
    MaskedRowSoftmax(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Log(Var, f64),
    SumSq(Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Transpose(Var),
    RowNormalize(Var),
    Gather(Var, Vec<(usize, usize)>),
    Scatter(Var, Vec<(usize, usize, usize)>),
    PairwiseSqDist(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Single-owner record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`, or `None` when `v` does not
    /// influence the loss through any differentiable path.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn check_same(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

fn softmax_row(input: &[f64], out: &mut [f64]) {
    let max = input.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(input) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.get(0, 0)
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push_raw(value, Op::Constant, false)
    }

    fn push_raw(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Matrix, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(name.to_string()));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_nt(self.value(b))?;
        self.push("matmul_nt", value, Op::MatMulNt(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        check_same("add", x, y)?;
        let mut value = x.clone();
        value.add_assign(y);
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        check_same("sub", x, y)?;
        let mut value = x.clone();
        for (v, w) in value.data_mut().iter_mut().zip(y.data()) {
            *v -= w;
        }
        self.push("sub", value, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        check_same("mul", x, y)?;
        let mut value = x.clone();
        for (v, w) in value.data_mut().iter_mut().zip(y.data()) {
            *v *= w;
        }
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    /// Adds a `1 x cols` row to every row of `a` (bias broadcast).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(Error::dim("add_row", format!("{:?} + {:?}", x.shape(), r.shape())));
        }
        let mut value = x.clone();
        for i in 0..value.rows() {
            for (v, b) in value.row_mut(i).iter_mut().zip(r.data()) {
                *v += b;
            }
        }
        self.push("add_row", value, Op::AddRow(a, row), &[a, row])
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (x, c) = (self.value(a), self.value(col));
        if c.cols() != 1 || c.rows() != x.rows() {
            return Err(Error::dim("mul_col", format!("{:?} * {:?}", x.shape(), c.shape())));
        }
        let mut value = x.clone();
        for i in 0..value.rows() {
            let f = c.get(i, 0);
            for v in value.row_mut(i) {
                *v *= f;
            }
        }
        self.push("mul_col", value, Op::MulCol(a, col), &[a, col])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).map(|v| v + c);
        self.push("add_scalar", value, Op::AddScalar(a), &[a])
    }

    pub fn scale(&mut self, a: Var, f: f64) -> Result<Var> {
        let value = self.value(a).scaled(f);
        self.push("scale", value, Op::Scale(a, f), &[a])
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut value = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            softmax_row(x.row(i), value.row_mut(i));
        }
        self.push("row_softmax", value, Op::RowSoftmax(a), &[a])
    }

    /// Row softmax restricted to entries where `mask` is set; masked-out
    /// entries (and rows with no unmasked entry) are exactly zero.
    pub fn masked_row_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let x = self.value(a);
        if mask.len() != x.len() {
            return Err(Error::dim("masked_row_softmax", format!("mask of {} for {:?}", mask.len(), x.shape())));
        }
        let cols = x.cols();
        let mut value = Matrix::zeros(x.rows(), cols);
        for i in 0..x.rows() {
            let row_mask = &mask[i * cols..(i + 1) * cols];
            let xs = x.row(i);
            let max = xs.iter().zip(row_mask).filter(|(_, &m)| m).map(|(&v, _)| v).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let out = value.row_mut(i);
            let mut total = 0.0;
            for j in 0..cols {
                if row_mask[j] {
                    out[j] = (xs[j] - max).exp();
                    total += out[j];
                }
            }
            for o in out.iter_mut() {
                *o /= total;
            }
        }
        self.push("masked_row_softmax", value, Op::MaskedRowSoftmax(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        self.push("sigmoid", value, Op::Sigmoid(a), &[a])
    }

    /// `max(x, slope * x)` for `0 <= slope <= 1`.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { slope * v });
        self.push("leaky_relu", value, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.leaky_relu(a, 0.0)
    }

    /// Natural log with inputs clamped from below at `floor`; the clamped
    /// region has zero gradient.
    pub fn log(&mut self, a: Var, floor: f64) -> Result<Var> {
        let value = self.value(a).map(|v| v.max(floor).ln());
        self.push("log", value, Op::Log(a, floor), &[a])
    }

    /// Sum of squared entries, as a 1x1 node.
    pub fn l2_norm_sq(&mut self, a: Var) -> Result<Var> {
        let value = Matrix::scalar(self.value(a).sum_sq());
        self.push("l2_norm_sq", value, Op::SumSq(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Matrix::scalar(self.value(a).sum());
        self.push("sum", value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::dim("mean", "empty matrix"));
        }
        let value = Matrix::scalar(x.sum() / x.len() as f64);
        self.push("mean", value, Op::Mean(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::dim("concat_cols", "no operands"))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for p in parts {
            let m = self.value(*p);
            if m.rows() != rows {
                return Err(Error::dim("concat_cols", format!("rows {} vs {}", m.rows(), rows)));
            }
            cols += m.cols();
        }
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let m = self.value(*p);
            for i in 0..rows {
                value.row_mut(i)[offset..offset + m.cols()].copy_from_slice(m.row(i));
            }
            offset += m.cols();
        }
        self.push("concat_cols", value, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::dim("concat_rows", "no operands"))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let m = self.value(*p);
            if m.cols() != cols {
                return Err(Error::dim("concat_rows", format!("cols {} vs {}", m.cols(), cols)));
            }
            data.extend_from_slice(m.data());
            rows += m.rows();
        }
        let value = Matrix::from_vec(rows, cols, data)?;
        self.push("concat_rows", value, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.cols() {
            return Err(Error::dim("slice_cols", format!("{}..{} of {} columns", start, start + len, x.cols())));
        }
        let mut value = Matrix::zeros(x.rows(), len);
        for i in 0..x.rows() {
            value.row_mut(i).copy_from_slice(&x.row(i)[start..start + len]);
        }
        self.push("slice_cols", value, Op::SliceCols(a, start), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        self.push("transpose", value, Op::Transpose(a), &[a])
    }

    /// Divides every row by its L2 norm. A zero row is a numeric error.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut value = x.clone();
        for i in 0..x.rows() {
            let norm = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Numeric(format!("row_normalize: row {} has zero norm", i)));
            }
            for v in value.row_mut(i) {
                *v /= norm;
            }
        }
        self.push("row_normalize", value, Op::RowNormalize(a), &[a])
    }

    /// Collects entries `a[r][c]` into a `k x 1` column.
    pub fn gather(&mut self, a: Var, positions: Vec<(usize, usize)>) -> Result<Var> {
        let x = self.value(a);
        if let Some(&(r, c)) = positions.iter().find(|&&(r, c)| r >= x.rows() || c >= x.cols()) {
            return Err(Error::dim("gather", format!("({}, {}) outside {:?}", r, c, x.shape())));
        }
        let value = Matrix::col_vector(positions.iter().map(|&(r, c)| x.get(r, c)).collect());
        self.push("gather", value, Op::Gather(a, positions), &[a])
    }

    /// Builds a `rows x cols` matrix where each `(k, r, c)` adds `src[k]`
    /// (a flat index into `src`) into entry `(r, c)`.
    pub fn scatter(&mut self, src: Var, rows: usize, cols: usize, targets: Vec<(usize, usize, usize)>) -> Result<Var> {
        let x = self.value(src);
        let mut value = Matrix::zeros(rows, cols);
        for &(k, r, c) in &targets {
            if k >= x.len() || r >= rows || c >= cols {
                return Err(Error::dim("scatter", format!("target ({}, {}, {}) out of range", k, r, c)));
            }
            value.add_at(r, c, x.data()[k]);
        }
        self.push("scatter", value, Op::Scatter(src, targets), &[src])
    }

    /// `out[i][j] = ||a_i - b_j||^2`.
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.cols() {
            return Err(Error::dim("pairwise_sq_dist", format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let mut value = Matrix::zeros(x.rows(), y.rows());
        for i in 0..x.rows() {
            for j in 0..y.rows() {
                let d: f64 = x.row(i).iter().zip(y.row(j)).map(|(p, q)| (p - q) * (p - q)).sum();
                value.set(i, j, d);
            }
        }
        self.push("pairwise_sq_dist", value, Op::PairwiseSqDist(a, b), &[a, b])
    }

    /// Reverse sweep from a 1x1 `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Usage("backward on an empty tape".into()));
        }
        let root = self.nodes.get(loss.0).ok_or_else(|| Error::Usage("loss node is not on this tape".into()))?;
        if root.value.shape() != (1, 1) {
            return Err(Error::dim("backward", format!("loss shape {:?}", root.value.shape())));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut acc = |v: Var, contrib: Matrix| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.matmul_nt(self.value(*b)).expect("shape fixed on forward"));
                }
                if self.needs(*b) {
                    acc(*b, self.value(*a).matmul_tn(g).expect("shape fixed on forward"));
                }
            }
            Op::MatMulNt(a, b) => {
                // y = a b^T: da = g b, db = g^T a
                if self.needs(*a) {
                    acc(*a, g.matmul(self.value(*b)).expect("shape fixed on forward"));
                }
                if self.needs(*b) {
                    acc(*b, g.matmul_tn(self.value(*a)).expect("shape fixed on forward"));
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.clone());
                }
                if self.needs(*b) {
                    acc(*b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.clone());
                }
                if self.needs(*b) {
                    acc(*b, g.scaled(-1.0));
                }
            }
            Op::Mul(a, b) => {
                let (x, z) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let mut d = g.clone();
                    for (v, w) in d.data_mut().iter_mut().zip(z.data()) {
                        *v *= w;
                    }
                    acc(*a, d);
                }
                if self.needs(*b) {
                    let mut d = g.clone();
                    for (v, w) in d.data_mut().iter_mut().zip(x.data()) {
                        *v *= w;
                    }
                    acc(*b, d);
                }
            }
            Op::AddRow(a, row) => {
                if self.needs(*a) {
                    acc(*a, g.clone());
                }
                if self.needs(*row) {
                    let mut d = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (s, v) in d.data_mut().iter_mut().zip(g.row(i)) {
                            *s += v;
                        }
                    }
                    acc(*row, d);
                }
            }
            Op::MulCol(a, col) => {
                let (x, c) = (self.value(*a), self.value(*col));
                if self.needs(*a) {
                    let mut d = g.clone();
                    for i in 0..d.rows() {
                        let f = c.get(i, 0);
                        for v in d.row_mut(i) {
                            *v *= f;
                        }
                    }
                    acc(*a, d);
                }
                if self.needs(*col) {
                    let d = (0..x.rows()).map(|i| x.row(i).iter().zip(g.row(i)).map(|(p, q)| p * q).sum()).collect();
                    acc(*col, Matrix::col_vector(d));
                }
            }
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Scale(a, f) => acc(*a, g.scaled(*f)),
            Op::RowSoftmax(a) | Op::MaskedRowSoftmax(a) => {
                // masked entries have y = 0, so the same Jacobian applies
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for (j, out) in d.row_mut(i).iter_mut().enumerate() {
                        *out = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*a, d);
            }
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                for (v, s) in d.data_mut().iter_mut().zip(y.data()) {
                    *v *= s * (1.0 - s);
                }
                acc(*a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                let mut d = g.clone();
                for (v, &xi) in d.data_mut().iter_mut().zip(x.data()) {
                    if xi <= 0.0 {
                        *v *= slope;
                    }
                }
                acc(*a, d);
            }
            Op::Log(a, floor) => {
                let x = self.value(*a);
                let mut d = g.clone();
                for (v, &xi) in d.data_mut().iter_mut().zip(x.data()) {
                    *v = if xi > *floor { *v / xi } else { 0.0 };
                }
                acc(*a, d);
            }
            Op::SumSq(a) => {
                let s = g.get(0, 0);
                acc(*a, self.value(*a).scaled(2.0 * s));
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                acc(*a, Matrix::filled(x.rows(), x.cols(), g.get(0, 0)));
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                acc(*a, Matrix::filled(x.rows(), x.cols(), g.get(0, 0) / x.len() as f64));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let cols = self.value(*p).cols();
                    if self.needs(*p) {
                        let mut d = Matrix::zeros(g.rows(), cols);
                        for i in 0..g.rows() {
                            d.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + cols]);
                        }
                        acc(*p, d);
                    }
                    offset += cols;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (rows, cols) = self.value(*p).shape();
                    if self.needs(*p) {
                        let data = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        acc(*p, Matrix::from_vec(rows, cols, data).expect("shape fixed on forward"));
                    }
                    offset += rows;
                }
            }
            Op::SliceCols(a, start) => {
                let x = self.value(*a);
                let mut d = Matrix::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    d.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                acc(*a, d);
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::RowNormalize(a) => {
                let x = self.value(*a);
                let mut d = Matrix::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    let norm = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for (j, out) in d.row_mut(i).iter_mut().enumerate() {
                        *out = (gr[j] - yr[j] * dot) / norm;
                    }
                }
                acc(*a, d);
            }
            Op::Gather(a, positions) => {
                let x = self.value(*a);
                let mut d = Matrix::zeros(x.rows(), x.cols());
                for (k, &(r, c)) in positions.iter().enumerate() {
                    d.add_at(r, c, g.data()[k]);
                }
                acc(*a, d);
            }
            Op::Scatter(src, targets) => {
                let x = self.value(*src);
                let mut d = Matrix::zeros(x.rows(), x.cols());
                for &(k, r, c) in targets {
                    d.data_mut()[k] += g.get(r, c);
                }
                acc(*src, d);
            }
            Op::PairwiseSqDist(a, b) => {
                let (x, z) = (self.value(*a), self.value(*b));
                let mut da = Matrix::zeros(x.rows(), x.cols());
                let mut db = Matrix::zeros(z.rows(), z.cols());
                for i in 0..x.rows() {
                    for j in 0..z.rows() {
                        let w = 2.0 * g.get(i, j);
                        if w == 0.0 {
                            continue;
                        }
                        for k in 0..x.cols() {
                            let diff = x.get(i, k) - z.get(j, k);
                            da.add_at(i, k, w * diff);
                            db.add_at(j, k, -w * diff);
                        }
                    }
                }
                if self.needs(*a) {
                    acc(*a, da);
                }
                if self.needs(*b) {
                    acc(*b, db);
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
