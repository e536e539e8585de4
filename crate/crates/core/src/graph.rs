//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! A [`Tape`] records one forward pass as a flat list of nodes; creation
//! order is a topological order, so `backward` is a single reverse sweep.
//! Graphs are rebuilt per forward pass because bag sizes vary per patient.
//! A tape and the parameters it reads are confined to one thread for the
//! duration of a forward/backward pair.

use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use crate::param::{ParamId, ParamStore};

/// Floor applied to arguments of on-graph logarithms.
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    /// Leaf constant; receives no gradient.
    Const,
    /// Leaf snapshot of a parameter value; its gradient flows to the store.
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    /// Broadcast-add a 1xC bias row to every row of the left operand.
    AddRow(NodeId, NodeId),
    /// Elementwise product.
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Elementwise a*x + b; the shift is baked into the cached value and
    /// drops out of the derivative.
    ScaleShift(NodeId, f64),
    SoftmaxRows(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    /// ln(max(x, LOG_CLAMP)); gradient is zero where the clamp binds.
    LogClamped(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    ConcatRows(NodeId, NodeId),
    ConcatCols(NodeId, NodeId),
    /// Column range [start, end) of the input.
    SliceCols(NodeId, usize, usize),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Matrix,
}

/// Recorded forward pass.
#[derive(Default)]
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

    /// Cached value of a node.
    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Const, value)
    }

    /// Record a leaf carrying the current value of `id`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(Op::Param(id), store.value(id).clone())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).transpose();
        self.push(Op::Transpose(a), value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), value))
    }

    /// `a + bias` where `bias` is a 1xC row broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, bias_m) = (self.value(a), self.value(bias));
        if bias_m.rows() != 1 || bias_m.cols() != m.cols() {
            return Err(CoreError::shape("add_row", m.shape(), bias_m.shape()));
        }
        let mut value = m.clone();
        for r in 0..value.rows() {
            for (v, &b) in value.row_mut(r).iter_mut().zip(bias_m.row(0)) {
                *v += b;
            }
        }
        Ok(self.push(Op::AddRow(a, bias), value))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let value = self.value(a).scale(k);
        self.push(Op::Scale(a, k), value)
    }

    /// Elementwise `k*x + shift`.
    pub fn scale_shift(&mut self, a: NodeId, k: f64, shift: f64) -> NodeId {
        let value = self.value(a).map(|v| k * v + shift);
        self.push(Op::ScaleShift(a, k), value)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).softmax_rows()?;
        Ok(self.push(Op::SoftmaxRows(a), value))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(Op::Sigmoid(a), value)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(Op::Relu(a), value)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), value)
    }

    /// ln(max(x, 1e-12)).
    pub fn log_clamped(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| v.max(LOG_CLAMP).ln());
        self.push(Op::LogClamped(a), value)
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(Op::Sum(a), value)
    }

    /// Mean of all entries, as a 1x1 node.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let value = Matrix::scalar(self.value(a).mean());
        self.push(Op::Mean(a), value)
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (top, bottom) = (self.value(a), self.value(b));
        if top.cols() != bottom.cols() {
            return Err(CoreError::shape("concat_rows", top.shape(), bottom.shape()));
        }
        let mut data = Vec::with_capacity((top.rows() + bottom.rows()) * top.cols());
        data.extend_from_slice(top.data());
        data.extend_from_slice(bottom.data());
        let value = Matrix::from_vec(top.rows() + bottom.rows(), top.cols(), data)?;
        Ok(self.push(Op::ConcatRows(a, b), value))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (left, right) = (self.value(a), self.value(b));
        if left.rows() != right.rows() {
            return Err(CoreError::shape("concat_cols", left.shape(), right.shape()));
        }
        let cols = left.cols() + right.cols();
        let mut value = Matrix::zeros(left.rows(), cols);
        for r in 0..left.rows() {
            value.row_mut(r)[..left.cols()].copy_from_slice(left.row(r));
            value.row_mut(r)[left.cols()..].copy_from_slice(right.row(r));
        }
        Ok(self.push(Op::ConcatCols(a, b), value))
    }

    /// Columns [start, end) of `a`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let m = self.value(a);
        if start >= end || end > m.cols() {
            return Err(CoreError::Contract(format!(
                "slice_cols [{start}, {end}) out of range for {} columns",
                m.cols()
            )));
        }
        let mut value = Matrix::zeros(m.rows(), end - start);
        for r in 0..m.rows() {
            value.row_mut(r).copy_from_slice(&m.row(r)[start..end]);
        }
        Ok(self.push(Op::SliceCols(a, start, end), value))
    }

    /// Reverse sweep from a scalar loss node; accumulates d(loss)/d(param)
    /// into the store for every parameter reachable from `loss`.
    /// Parameters not on the graph keep whatever gradient they had.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        let loss_val = self.value(loss);
        if loss_val.shape() != (1, 1) {
            return Err(CoreError::Contract(format!(
                "backward requires a 1x1 loss node, got {}x{}",
                loss_val.rows(),
                loss_val.cols()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let grad = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Param(pid) => store.accumulate_grad(*pid, &grad)?,
                Op::MatMul(a, b) => {
                    let da = grad.matmul(&self.value(*b).transpose())?;
                    let db = self.value(*a).transpose().matmul(&grad)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, grad.transpose())?,
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, grad.clone())?;
                    accumulate(&mut grads, *b, grad)?;
                }
                Op::AddRow(a, bias) => {
                    let mut db = Matrix::zeros(1, grad.cols());
                    for r in 0..grad.rows() {
                        for (acc, &g) in db.row_mut(0).iter_mut().zip(grad.row(r)) {
                            *acc += g;
                        }
                    }
                    accumulate(&mut grads, *a, grad)?;
                    accumulate(&mut grads, *bias, db)?;
                }
                Op::Mul(a, b) => {
                    let da = grad.zip_map(self.value(*b), |g, y| g * y)?;
                    let db = grad.zip_map(self.value(*a), |g, x| g * x)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Scale(a, k) => accumulate(&mut grads, *a, grad.scale(*k))?,
                Op::ScaleShift(a, k) => accumulate(&mut grads, *a, grad.scale(*k))?,
                Op::SoftmaxRows(a) => {
                    // dx_i = y_i * (dy_i - sum_j dy_j y_j), per row.
                    let y = &self.nodes[i].value;
                    let mut dx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = grad
                            .row(r)
                            .iter()
                            .zip(y.row(r))
                            .map(|(&g, &v)| g * v)
                            .sum();
                        for ((d, &g), &v) in dx.row_mut(r).iter_mut().zip(grad.row(r)).zip(y.row(r))
                        {
                            *d = v * (g - dot);
                        }
                    }
                    accumulate(&mut grads, *a, dx)?;
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[i].value;
                    let dx = grad.zip_map(y, |g, v| g * (1.0 - v * v))?;
                    accumulate(&mut grads, *a, dx)?;
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[i].value;
                    let dx = grad.zip_map(y, |g, v| g * v * (1.0 - v))?;
                    accumulate(&mut grads, *a, dx)?;
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let dx = grad.zip_map(x, |g, v| if v > 0.0 { g } else { 0.0 })?;
                    accumulate(&mut grads, *a, dx)?;
                }
                Op::Exp(a) => {
                    let y = &self.nodes[i].value;
                    let dx = grad.zip_map(y, |g, v| g * v)?;
                    accumulate(&mut grads, *a, dx)?;
                }
                Op::LogClamped(a) => {
                    let x = self.value(*a);
                    let dx = grad.zip_map(x, |g, v| {
                        if v >= LOG_CLAMP {
                            g / v
                        } else {
                            0.0
                        }
                    })?;
                    accumulate(&mut grads, *a, dx)?;
                }
                Op::Sum(a) => {
                    let g = grad.as_scalar()?;
                    let src = self.value(*a);
                    accumulate(&mut grads, *a, Matrix::filled(src.rows(), src.cols(), g))?;
                }
                Op::Mean(a) => {
                    let src = self.value(*a);
                    let n = (src.rows() * src.cols()) as f64;
                    let g = grad.as_scalar()? / n;
                    accumulate(&mut grads, *a, Matrix::filled(src.rows(), src.cols(), g))?;
                }
                Op::ConcatRows(a, b) => {
                    let top_rows = self.value(*a).rows();
                    let cols = grad.cols();
                    let mut da = Matrix::zeros(top_rows, cols);
                    let mut db = Matrix::zeros(grad.rows() - top_rows, cols);
                    for r in 0..top_rows {
                        da.row_mut(r).copy_from_slice(grad.row(r));
                    }
                    for r in top_rows..grad.rows() {
                        db.row_mut(r - top_rows).copy_from_slice(grad.row(r));
                    }
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::ConcatCols(a, b) => {
                    let left_cols = self.value(*a).cols();
                    let mut da = Matrix::zeros(grad.rows(), left_cols);
                    let mut db = Matrix::zeros(grad.rows(), grad.cols() - left_cols);
                    for r in 0..grad.rows() {
                        da.row_mut(r).copy_from_slice(&grad.row(r)[..left_cols]);
                        db.row_mut(r).copy_from_slice(&grad.row(r)[left_cols..]);
                    }
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::SliceCols(a, start, _end) => {
                    let src = self.value(*a);
                    let mut da = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..grad.rows() {
                        da.row_mut(r)[*start..*start + grad.cols()].copy_from_slice(grad.row(r));
                    }
                    accumulate(&mut grads, *a, da)?;
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, delta: Matrix) -> Result<()> {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&delta),
        slot @ None => {
            *slot = Some(delta);
            Ok(())
        }
    }
}
