//! Tape-based reverse-mode differentiation over small dense matrices.
//!
//! Every node holds a 2-D `f64` array; scalars are `1×1` arrays and batched
//! quantities use one row per batch entry. Complex values are carried as a
//! pair of real nodes (real part, imaginary part).
//!
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction and [`Graph::backward`] is a single reverse sweep.

mod check;
mod params;

pub use check::{check_gradients, GradCheckError};
pub use params::{BoundParams, ParamFormatError, ParamVector, Segment};

use ndarray::{s, Array2, Axis, Zip};
use thiserror::Error;

pub type Matrix = Array2<f64>;

/// `tanh` through a single `exp`; a Taylor series covers `|x| < 1/16`,
/// where `1 − e^{−2|x|}` would cancel. Relative error is below 1e-14.
pub fn tanh(x: f64) -> f64 {
    let a = x.abs();
    if a < 0.0625 {
        let x2 = x * x;
        return x * (1.0 + x2 * (-1.0 / 3.0 + x2 * (2.0 / 15.0 + x2 * (-17.0 / 315.0 + x2 * (62.0 / 2835.0)))));
    }
    let e = (-2.0 * a).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Error)]
pub enum GradError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot((usize, usize)),
    #[error("unknown parameter segment `{0}`")]
    UnknownSegment(String),
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

/// A fused operation with a hand-written vector-Jacobian product.
///
/// Used for kernels that would otherwise expand into millions of scalar
/// nodes (the exact demapper loss enumerates every point pair).
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Matrix]) -> Result<Matrix, GradError>;

    /// Returns one adjoint per input, same shape as the input.
    fn backward(&self, inputs: &[&Matrix], output: &Matrix, upstream: &Matrix) -> Vec<Matrix>;
}

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    Tanh(NodeId),
    Softplus(NodeId),
    Scale(NodeId, f64),
    Offset(NodeId),
    MatMul(NodeId, NodeId),
    BiasAdd(NodeId, NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Sum(NodeId),
    WeightedSum(NodeId, Matrix),
    RowSum(NodeId),
    Broadcast(NodeId),
    SliceCols(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    Reshape(NodeId),
    SegmentSum(NodeId, usize),
    RepeatCols(NodeId, usize),
    TileCols(NodeId),
    ClampMin(NodeId, f64),
    Custom(Box<dyn CustomOp>, Vec<NodeId>),
}

struct Node {
    op: Op,
    value: Matrix,
    tracked: bool,
}

/// Append-only computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.adjoints[id.0].as_ref()
    }

    /// Adjoint of `id`, or zeros if the root does not depend on it.
    pub fn wrt(&self, id: NodeId) -> Matrix {
        match &self.adjoints[id.0] {
            Some(a) => a.clone(),
            None => Matrix::zeros(self.shapes[id.0]),
        }
    }
}

fn dims(m: &Matrix) -> (usize, usize) {
    m.dim()
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn row_softmax(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn row_log_softmax(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
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

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        dims(&self.nodes[id.0].value)
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[[0, 0]]
    }

    fn push(&mut self, op: Op, value: Matrix, tracked: bool) -> NodeId {
        self.nodes.push(Node { op, value, tracked });
        NodeId(self.nodes.len() - 1)
    }

    fn tracked(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].tracked)
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let value = self.nodes[a.0].value.mapv(f);
        let t = self.tracked(&[a]);
        self.push(op, value, t)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), GradError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(GradError::ShapeMismatch { op, lhs: sa, rhs: sb });
        }
        Ok(())
    }

    /// Differentiable input (parameters).
    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// Input the root is never differentiated against.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    pub fn scalar_constant(&mut self, v: f64) -> NodeId {
        self.constant(Matrix::from_elem((1, 1), v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        self.same_shape("add", a, b)?;
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let t = self.tracked(&[a, b]);
        Ok(self.push(Op::Add(a, b), v, t))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        self.same_shape("subtract", a, b)?;
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        let t = self.tracked(&[a, b]);
        Ok(self.push(Op::Sub(a, b), v, t))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        self.same_shape("multiply", a, b)?;
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        let t = self.tracked(&[a, b]);
        Ok(self.push(Op::Mul(a, b), v, t))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        self.same_shape("divide", a, b)?;
        let v = &self.nodes[a.0].value / &self.nodes[b.0].value;
        let t = self.tracked(&[a, b]);
        Ok(self.push(Op::Div(a, b), v, t))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Ln(a), f64::ln)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Tanh(a), tanh)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Softplus(a), softplus)
    }

    /// `c · a` for a constant `c`.
    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    /// `a + c` for a constant `c`.
    pub fn offset(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, Op::Offset(a), |x| x + c)
    }

    pub fn clamp_min(&mut self, a: NodeId, lo: f64) -> NodeId {
        self.unary(a, Op::ClampMin(a, lo), |x| x.max(lo))
    }

    /// Matrix product `(r×n)·(n×c)`. A column right operand gives a batched
    /// matrix-vector product.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(GradError::ShapeMismatch {
                op: "matrix product",
                lhs: sa,
                rhs: sb,
            });
        }
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        let t = self.tracked(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), v, t))
    }

    /// Adds a `1×c` bias row to every row of `a`.
    pub fn bias_add(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, GradError> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb.0 != 1 || sb.1 != sa.1 {
            return Err(GradError::ShapeMismatch {
                op: "bias add",
                lhs: sa,
                rhs: sb,
            });
        }
        let v = &self.nodes[a.0].value + &self.nodes[bias.0].value;
        let t = self.tracked(&[a, bias]);
        Ok(self.push(Op::BiasAdd(a, bias), v, t))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let v = row_softmax(&self.nodes[a.0].value);
        let t = self.tracked(&[a]);
        self.push(Op::Softmax(a), v, t)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let v = row_log_softmax(&self.nodes[a.0].value);
        let t = self.tracked(&[a]);
        self.push(Op::LogSoftmax(a), v, t)
    }

    /// Sum of all entries, as a `1×1` node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Matrix::from_elem((1, 1), self.nodes[a.0].value.sum());
        let t = self.tracked(&[a]);
        self.push(Op::Sum(a), v, t)
    }

    /// `Σ weights ⊙ a` with constant weights, as a `1×1` node.
    pub fn weighted_sum(&mut self, a: NodeId, weights: Matrix) -> Result<NodeId, GradError> {
        let sa = self.shape(a);
        if weights.dim() != sa {
            return Err(GradError::ShapeMismatch {
                op: "weighted sum",
                lhs: sa,
                rhs: weights.dim(),
            });
        }
        let total = Zip::from(&self.nodes[a.0].value)
            .and(&weights)
            .fold(0.0, |acc, &x, &w| acc + x * w);
        let t = self.tracked(&[a]);
        Ok(self.push(Op::WeightedSum(a, weights), Matrix::from_elem((1, 1), total), t))
    }

    /// Sums each row, giving an `r×1` column.
    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.sum_axis(Axis(1)).insert_axis(Axis(1));
        let t = self.tracked(&[a]);
        self.push(Op::RowSum(a), v, t)
    }

    /// Broadcasts a `1×1` node to `shape`.
    pub fn broadcast(&mut self, a: NodeId, shape: (usize, usize)) -> Result<NodeId, GradError> {
        let sa = self.shape(a);
        if sa != (1, 1) {
            return Err(GradError::ShapeMismatch {
                op: "scalar broadcast",
                lhs: sa,
                rhs: (1, 1),
            });
        }
        let v = Matrix::from_elem(shape, self.nodes[a.0].value[[0, 0]]);
        let t = self.tracked(&[a]);
        Ok(self.push(Op::Broadcast(a), v, t))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId, GradError> {
        let sa = self.shape(a);
        if start >= end || end > sa.1 {
            return Err(GradError::Invalid {
                op: "slice columns",
                msg: format!("range {start}..{end} out of bounds for shape {sa:?}"),
            });
        }
        let v = self.nodes[a.0].value.slice(s![.., start..end]).to_owned();
        let t = self.tracked(&[a]);
        Ok(self.push(Op::SliceCols(a, start), v, t))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, GradError> {
        let Some(&first) = parts.first() else {
            return Err(GradError::Invalid {
                op: "concatenate columns",
                msg: "no inputs".into(),
            });
        };
        let rows = self.shape(first).0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(GradError::ShapeMismatch {
                    op: "concatenate columns",
                    lhs: self.shape(first),
                    rhs: self.shape(p),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|p| self.nodes[p.0].value.view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        let t = self.tracked(parts);
        Ok(self.push(Op::ConcatCols(parts.to_vec()), v, t))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: NodeId, shape: (usize, usize)) -> Result<NodeId, GradError> {
        let sa = self.shape(a);
        if sa.0 * sa.1 != shape.0 * shape.1 {
            return Err(GradError::ShapeMismatch {
                op: "reshape",
                lhs: sa,
                rhs: shape,
            });
        }
        let data: Vec<f64> = self.nodes[a.0].value.iter().copied().collect();
        let v = Matrix::from_shape_vec(shape, data).expect("element count checked");
        let t = self.tracked(&[a]);
        Ok(self.push(Op::Reshape(a), v, t))
    }

    /// Sums consecutive groups of `group` columns: `r×(g·c) → r×c`.
    pub fn segment_sum(&mut self, a: NodeId, group: usize) -> Result<NodeId, GradError> {
        let (r, c) = self.shape(a);
        if group == 0 || c % group != 0 {
            return Err(GradError::Invalid {
                op: "segment sum",
                msg: format!("{c} columns not divisible into groups of {group}"),
            });
        }
        let x = &self.nodes[a.0].value;
        let mut v = Matrix::zeros((r, c / group));
        for j in 0..c / group {
            for l in 0..group {
                let col = x.column(j * group + l);
                let mut out = v.column_mut(j);
                out += &col;
            }
        }
        let t = self.tracked(&[a]);
        Ok(self.push(Op::SegmentSum(a, group), v, t))
    }

    /// Repeats every column `times` times in place: `[a, b] → [a, a, b, b]`.
    pub fn repeat_cols(&mut self, a: NodeId, times: usize) -> NodeId {
        let (r, c) = self.shape(a);
        let x = &self.nodes[a.0].value;
        let v = Matrix::from_shape_fn((r, c * times), |(i, j)| x[[i, j / times]]);
        let t = self.tracked(&[a]);
        self.push(Op::RepeatCols(a, times), v, t)
    }

    /// Tiles the whole column block `times` times: `[a, b] → [a, b, a, b]`.
    pub fn tile_cols(&mut self, a: NodeId, times: usize) -> NodeId {
        let (r, c) = self.shape(a);
        let x = &self.nodes[a.0].value;
        let v = Matrix::from_shape_fn((r, c * times), |(i, j)| x[[i, j % c]]);
        let t = self.tracked(&[a]);
        self.push(Op::TileCols(a), v, t)
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[NodeId]) -> Result<NodeId, GradError> {
        let refs: Vec<&Matrix> = inputs.iter().map(|i| &self.nodes[i.0].value).collect();
        let v = op.forward(&refs)?;
        let t = self.tracked(inputs);
        Ok(self.push(Op::Custom(op, inputs.to_vec()), v, t))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: NodeId) -> Result<Gradients, GradError> {
        let shape = self.shape(root);
        if shape != (1, 1) {
            return Err(GradError::NonScalarRoot(shape));
        }
        let n = root.0 + 1;
        let mut adj: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root.0] = Some(Matrix::ones((1, 1)));

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            self.propagate(node, &g, &mut adj);
            adj[idx] = Some(g);
        }
        Ok(Gradients {
            adjoints: adj,
            shapes: self.nodes.iter().map(|n| n.value.dim()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Matrix, adj: &mut [Option<Matrix>]) {
        let val = |id: NodeId| &self.nodes[id.0].value;
        let mut acc = |id: NodeId, d: Matrix| {
            if !self.nodes[id.0].tracked {
                return;
            }
            match &mut adj[id.0] {
                Some(a) => *a += &d,
                slot @ None => *slot = Some(d),
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Mul(a, b) => {
                acc(*a, g * val(*b));
                acc(*b, g * val(*a));
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                acc(*a, g / bv);
                acc(*b, -(g * y) / bv);
            }
            Op::Neg(a) => acc(*a, -g),
            Op::Exp(a) => acc(*a, g * y),
            Op::Ln(a) => acc(*a, g / val(*a)),
            Op::Square(a) => acc(*a, g * val(*a) * 2.0),
            Op::Sqrt(a) => acc(*a, g / (y * 2.0)),
            Op::Tanh(a) => acc(*a, g * &y.mapv(|t| 1.0 - t * t)),
            Op::Softplus(a) => acc(*a, g * &val(*a).mapv(sigmoid)),
            Op::Scale(a, c) => acc(*a, g * *c),
            Op::Offset(a) => acc(*a, g.clone()),
            Op::ClampMin(a, lo) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                    if x < *lo {
                        *d = 0.0;
                    }
                });
                acc(*a, d);
            }
            Op::MatMul(a, b) => {
                acc(*a, g.dot(&val(*b).t()));
                acc(*b, val(*a).t().dot(g));
            }
            Op::BiasAdd(a, bias) => {
                acc(*a, g.clone());
                acc(*bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Softmax(a) => {
                let dot = (g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                acc(*a, y * &(g - &dot));
            }
            Op::LogSoftmax(a) => {
                let p = y.mapv(f64::exp);
                let gs = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                acc(*a, g - &(&p * &gs));
            }
            Op::Sum(a) => acc(*a, Matrix::from_elem(self.shape(*a), g[[0, 0]])),
            Op::WeightedSum(a, w) => acc(*a, w * g[[0, 0]]),
            Op::RowSum(a) => {
                let shape = self.shape(*a);
                acc(*a, Matrix::from_shape_fn(shape, |(i, _)| g[[i, 0]]));
            }
            Op::Broadcast(a) => acc(*a, Matrix::from_elem((1, 1), g.sum())),
            Op::SliceCols(a, start) => {
                let mut d = Matrix::zeros(self.shape(*a));
                let end = start + g.ncols();
                d.slice_mut(s![.., *start..end]).assign(g);
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    acc(p, g.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::Reshape(a) => {
                let data: Vec<f64> = g.iter().copied().collect();
                acc(*a, Matrix::from_shape_vec(self.shape(*a), data).expect("same size"));
            }
            Op::SegmentSum(a, group) => {
                let shape = self.shape(*a);
                acc(*a, Matrix::from_shape_fn(shape, |(i, j)| g[[i, j / group]]));
            }
            Op::RepeatCols(a, times) => {
                let (r, c) = self.shape(*a);
                let mut d = Matrix::zeros((r, c));
                for j in 0..c * times {
                    let mut col = d.column_mut(j / times);
                    col += &g.column(j);
                }
                acc(*a, d);
            }
            Op::TileCols(a) => {
                let (r, c) = self.shape(*a);
                let mut d = Matrix::zeros((r, c));
                for j in 0..g.ncols() {
                    let mut col = d.column_mut(j % c);
                    col += &g.column(j);
                }
                acc(*a, d);
            }
            Op::Custom(op, inputs) => {
                let refs: Vec<&Matrix> = inputs.iter().map(|i| val(*i)).collect();
                let grads = op.backward(&refs, y, g);
                for (&i, d) in inputs.iter().zip(grads) {
                    acc(i, d);
                }
            }
        }
    }
}
