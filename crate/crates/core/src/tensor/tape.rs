//! Operation tape and reverse-mode adjoint propagation.
//!
//! Every operation appends one node holding its forward value. Handles
//! ([`Var`]) are plain indices into the tape, so the tape's node order is
//! the execution order and [`Tape::backward`] walks it in reverse.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Kind of a recorded operation, used by the gradient-check registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    ConcatCols,
    GatherRows,
    SegmentSum,
    Exp,
    Log,
    Powf,
    ClampMin,
    LeakyRelu,
    Elu,
    Sigmoid,
    Tanh,
    LogSigmoid,
    SegmentSoftmax,
    LogSoftmaxRows,
    Sum,
    SumRows,
    SumCols,
    FrobeniusSq,
    BceWithLogits,
}

impl OpKind {
    /// Every differentiable operation (everything but leaves).
    pub const DIFFERENTIABLE: [OpKind; 26] = [
        OpKind::MatMul,
        OpKind::Transpose,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::AddScalar,
        OpKind::ConcatCols,
        OpKind::GatherRows,
        OpKind::SegmentSum,
        OpKind::Exp,
        OpKind::Log,
        OpKind::Powf,
        OpKind::ClampMin,
        OpKind::LeakyRelu,
        OpKind::Elu,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::LogSigmoid,
        OpKind::SegmentSoftmax,
        OpKind::LogSoftmaxRows,
        OpKind::Sum,
        OpKind::SumRows,
        OpKind::SumCols,
        OpKind::FrobeniusSq,
        OpKind::BceWithLogits,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "elementwise_mul",
            OpKind::Scale => "scale",
            OpKind::AddScalar => "add_scalar",
            OpKind::ConcatCols => "concat_cols",
            OpKind::GatherRows => "gather_rows",
            OpKind::SegmentSum => "segment_sum",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Powf => "powf",
            OpKind::ClampMin => "clamp_min",
            OpKind::LeakyRelu => "leaky_relu",
            OpKind::Elu => "elu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::LogSigmoid => "log_sigmoid",
            OpKind::SegmentSoftmax => "softmax_over_segments",
            OpKind::LogSoftmaxRows => "log_softmax_rows",
            OpKind::Sum => "sum",
            OpKind::SumRows => "sum_rows",
            OpKind::SumCols => "sum_cols",
            OpKind::FrobeniusSq => "frobenius_sq",
            OpKind::BceWithLogits => "bce_with_logits",
        }
    }
}

impl std::fmt::Display for OpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Row-to-segment map shared by segment softmax and segment sums.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segments {
    ids: Arc<[usize]>,
    count: usize,
}

impl Segments {
    pub fn new(ids: Vec<usize>, count: usize) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&s| s >= count) {
            return Err(Error::contract(format!("segment id {bad} outside 0..{count}")));
        }
        Ok(Self {
            ids: ids.into(),
            count,
        })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Arc<[usize]>),
    SegmentSum(Var, Segments),
    Exp(Var),
    Log(Var),
    Powf(Var, f64),
    ClampMin(Var, f64),
    LeakyRelu(Var, f64),
    Elu(Var),
    Sigmoid(Var),
    Tanh(Var),
    LogSigmoid(Var),
    SegmentSoftmax(Var, Segments),
    LogSoftmaxRows(Var),
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    FrobeniusSq(Var),
    BceWithLogits {
        logits: Var,
        targets: Arc<Array2<f64>>,
        pos_weight: f64,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(..) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::GatherRows(..) => OpKind::GatherRows,
            Op::SegmentSum(..) => OpKind::SegmentSum,
            Op::Exp(..) => OpKind::Exp,
            Op::Log(..) => OpKind::Log,
            Op::Powf(..) => OpKind::Powf,
            Op::ClampMin(..) => OpKind::ClampMin,
            Op::LeakyRelu(..) => OpKind::LeakyRelu,
            Op::Elu(..) => OpKind::Elu,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Tanh(..) => OpKind::Tanh,
            Op::LogSigmoid(..) => OpKind::LogSigmoid,
            Op::SegmentSoftmax(..) => OpKind::SegmentSoftmax,
            Op::LogSoftmaxRows(..) => OpKind::LogSoftmaxRows,
            Op::Sum(..) => OpKind::Sum,
            Op::SumRows(..) => OpKind::SumRows,
            Op::SumCols(..) => OpKind::SumCols,
            Op::FrobeniusSq(..) => OpKind::FrobeniusSq,
            Op::BceWithLogits { .. } => OpKind::BceWithLogits,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Adjoints of the leaves reachable from a loss.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// `d(loss)/d(var)`, or `None` when `var` does not require a gradient
    /// or does not influence the loss.
    pub fn get(&self, var: Var) -> Option<&Array2<f64>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

/// Records forward operations for one training step.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    corrupt: Option<OpKind>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

fn broadcast_shape(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| match (x, y) {
        _ if x == y => Some(x),
        (1, y) => Some(y),
        (x, 1) => Some(x),
        _ => None,
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::Dimension { op, left: a, right: b }),
    }
}

/// Sums `grad` down to `shape` along broadcast axes.
fn reduce_to(grad: Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut g = grad;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

/// `a[index, :]` without the per-row reallocation of `select`.
pub(crate) fn take_rows(a: &Array2<f64>, index: &[usize]) -> Array2<f64> {
    let cols = a.ncols();
    let mut data = Vec::with_capacity(index.len() * cols);
    for &i in index {
        data.extend(a.row(i).iter().copied());
    }
    Array2::from_shape_vec((index.len(), cols), data).expect("rows have equal width")
}

/// `out[index[r], :] += a[r, :]` for every row `r`.
fn scatter_rows(a: &Array2<f64>, index: &[usize], rows: usize) -> Array2<f64> {
    let cols = a.ncols();
    let src = a.as_standard_layout();
    let src = src.as_slice().expect("standard layout");
    let mut out = vec![0.0; rows * cols];
    for (r, &i) in index.iter().enumerate() {
        let dst = &mut out[i * cols..(i + 1) * cols];
        for (d, s) in dst.iter_mut().zip(&src[r * cols..(r + 1) * cols]) {
            *d += s;
        }
    }
    Array2::from_shape_vec((rows, cols), out).expect("rows have equal width")
}

fn shape_of(a: &Array2<f64>) -> (usize, usize) {
    a.dim()
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

    /// Drops every recorded node. Outstanding [`Var`]s become invalid.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    /// Test hook: scales the adjoint leaving every `kind` node by 1.5 so
    /// gradient checks have a negative control.
    #[doc(hidden)]
    pub fn corrupt_adjoint(&mut self, kind: Option<OpKind>) {
        self.corrupt = kind;
    }

    pub fn value(&self, var: Var) -> &Array2<f64> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        self.nodes[var.0].value.dim()
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, var: Var) -> f64 {
        let v = self.value(var);
        debug_assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Sequence of operation kinds in execution order.
    pub fn op_kinds(&self) -> Vec<OpKind> {
        self.nodes.iter().map(|n| n.op.kind()).collect()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Error::Dimension {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let value = self.value(a).dot(self.value(b));
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push(value, Op::Transpose(a), &[a])
    }

    fn zip_broadcast(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Array2<f64>> {
        let (va, vb) = (self.value(a), self.value(b));
        let out = broadcast_shape(op, va.dim(), vb.dim())?;
        let ba = va.broadcast(out).expect("shape checked");
        let bb = vb.broadcast(out).expect("shape checked");
        Ok(Zip::from(&ba).and(&bb).map_collect(|&x, &y| f(x, y)))
    }

    /// Elementwise sum; either side may be a row vector, column vector or
    /// 1×1 broadcast against the other.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_broadcast("add", a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_broadcast("sub", a, b, |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise (Hadamard) product with the same broadcasting as [`add`](Self::add).
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_broadcast("elementwise_mul", a, b, |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        self.push(value, Op::Scale(a, factor), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, shift: f64) -> Var {
        let value = self.value(a) + shift;
        self.push(value, Op::AddScalar(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::contract("concat_cols of zero tensors"));
        };
        let rows = self.shape(first).0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    left: self.shape(first),
                    right: self.shape(p),
                });
            }
        }
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// `out[e] = a[index[e]]`.
    pub fn gather_rows(&mut self, a: Var, index: impl Into<Arc<[usize]>>) -> Result<Var> {
        let index: Arc<[usize]> = index.into();
        let src = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= src.nrows()) {
            return Err(Error::contract(format!(
                "gather_rows index {bad} outside 0..{}",
                src.nrows()
            )));
        }
        let value = take_rows(src, &index);
        Ok(self.push(value, Op::GatherRows(a, index), &[a]))
    }

    /// `out[s] = Σ_{e : seg[e] = s} a[e]`.
    pub fn segment_sum(&mut self, a: Var, segments: &Segments) -> Result<Var> {
        let src = self.value(a);
        if src.nrows() != segments.len() {
            return Err(Error::Dimension {
                op: "segment_sum",
                left: src.dim(),
                right: (segments.len(), 1),
            });
        }
        let value = scatter_rows(src, segments.ids(), segments.count());
        Ok(self.push(value, Op::SegmentSum(a, segments.clone()), &[a]))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        self.push(value, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        if let Some(bad) = src.iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Domain {
                op: "log",
                message: format!("argument {bad} is not positive"),
            });
        }
        let value = src.mapv(f64::ln);
        Ok(self.push(value, Op::Log(a), &[a]))
    }

    pub fn powf(&mut self, a: Var, exponent: f64) -> Var {
        let value = self.value(a).mapv(|x| x.powf(exponent));
        self.push(value, Op::Powf(a, exponent), &[a])
    }

    /// `max(a, floor)`; the gradient is blocked where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let value = self.value(a).mapv(|x| x.max(floor));
        self.push(value, Op::ClampMin(a, floor), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(value, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| if x > 0.0 { x } else { x.exp_m1() });
        self.push(value, Op::Elu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.push(value, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a), &[a])
    }

    /// `ln(sigmoid(a))`, stable for large `|a|`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(log_sigmoid);
        self.push(value, Op::LogSigmoid(a), &[a])
    }

    /// Softmax over the rows sharing a segment id, independently per
    /// column. A segment with a single row yields 1.
    pub fn softmax_over_segments(&mut self, a: Var, segments: &Segments) -> Result<Var> {
        let src = self.value(a);
        if src.nrows() != segments.len() {
            return Err(Error::Dimension {
                op: "softmax_over_segments",
                left: src.dim(),
                right: (segments.len(), 1),
            });
        }
        let cols = src.ncols();
        let mut max = Array2::from_elem((segments.count(), cols), f64::NEG_INFINITY);
        for (row, &s) in src.rows().into_iter().zip(segments.ids()) {
            for (m, &x) in max.row_mut(s).iter_mut().zip(row) {
                *m = m.max(x);
            }
        }
        let mut value = Array2::zeros(src.dim());
        let mut total = Array2::<f64>::zeros((segments.count(), cols));
        for ((mut out, row), &s) in value.rows_mut().into_iter().zip(src.rows()).zip(segments.ids()) {
            for c in 0..cols {
                let e = (row[c] - max[[s, c]]).exp();
                out[c] = e;
                total[[s, c]] += e;
            }
        }
        for (mut out, &s) in value.rows_mut().into_iter().zip(segments.ids()) {
            for c in 0..cols {
                out[c] /= total[[s, c]];
            }
        }
        Ok(self.push(value, Op::SegmentSoftmax(a, segments.clone()), &[a]))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        self.push(value, Op::LogSoftmaxRows(a), &[a])
    }

    /// Sum of all entries, as 1×1.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    /// Per-row sums, as an `r×1` column.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(value, Op::SumRows(a), &[a])
    }

    /// Per-column sums, as a `1×c` row.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(value, Op::SumCols(a), &[a])
    }

    /// Squared Frobenius norm, as 1×1.
    pub fn frobenius_sq(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let value = Array2::from_elem((1, 1), src.iter().map(|x| x * x).sum());
        self.push(value, Op::FrobeniusSq(a), &[a])
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against constant
    /// targets in `[0, 1]`, with positive terms weighted by `pos_weight`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Arc<Array2<f64>>, pos_weight: f64) -> Result<Var> {
        let x = self.value(logits);
        if x.dim() != targets.dim() {
            return Err(Error::Dimension {
                op: "bce_with_logits",
                left: x.dim(),
                right: targets.dim(),
            });
        }
        let total: f64 = Zip::from(x)
            .and(targets.as_ref())
            .fold(0.0, |acc, &x, &t| {
                let ls = log_sigmoid(x);
                acc - (pos_weight * t * ls + (1.0 - t) * (ls - x))
            });
        let value = Array2::from_elem((1, 1), total / x.len() as f64);
        Ok(self.push(
            value,
            Op::BceWithLogits {
                logits,
                targets,
                pos_weight,
            },
            &[logits],
        ))
    }

    /// Propagates `d(loss)/d(·)` to every leaf that requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(mut g) = grads[i].take() else {
                continue;
            };
            if self.corrupt == Some(node.op.kind()) {
                g *= 1.5;
            }
            self.propagate(node, &g, &mut grads);
        }
        for (grad, node) in grads.iter_mut().zip(&self.nodes) {
            if !(matches!(node.op, Op::Leaf) && node.requires_grad) {
                *grad = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Array2<f64>>], var: Var, contribution: Array2<f64>) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        debug_assert_eq!(contribution.dim(), self.shape(var));
        match &mut grads[var.0] {
            Some(existing) => *existing += &contribution,
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&self, node: &Node, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.t().to_owned()),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, reduce_to(g.clone(), shape_of(self.value(*a))));
                self.accumulate(grads, *b, reduce_to(g.clone(), shape_of(self.value(*b))));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, reduce_to(g.clone(), shape_of(self.value(*a))));
                self.accumulate(grads, *b, reduce_to(-g, shape_of(self.value(*b))));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let out = g.dim();
                if self.requires_grad(*a) {
                    let bb = vb.broadcast(out).expect("forward shape");
                    let ga = Zip::from(g).and(&bb).map_collect(|&g, &y| g * y);
                    self.accumulate(grads, *a, reduce_to(ga, va.dim()));
                }
                if self.requires_grad(*b) {
                    let ba = va.broadcast(out).expect("forward shape");
                    let gb = Zip::from(g).and(&ba).map_collect(|&g, &x| g * x);
                    self.accumulate(grads, *b, reduce_to(gb, vb.dim()));
                }
            }
            Op::Scale(a, factor) => self.accumulate(grads, *a, g * *factor),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let width = self.shape(p).1;
                    let slice = g.slice(ndarray::s![.., start..start + width]).to_owned();
                    self.accumulate(grads, p, slice);
                    start += width;
                }
            }
            Op::GatherRows(a, index) => {
                let ga = scatter_rows(g, index, self.shape(*a).0);
                self.accumulate(grads, *a, ga);
            }
            Op::SegmentSum(a, segments) => {
                self.accumulate(grads, *a, take_rows(g, segments.ids()));
            }
            Op::Exp(a) => self.accumulate(grads, *a, g * y),
            Op::Log(a) => self.accumulate(grads, *a, g / self.value(*a)),
            Op::Powf(a, p) => {
                let x = self.value(*a);
                let ga = Zip::from(g).and(x).map_collect(|&g, &x| g * p * x.powf(p - 1.0));
                self.accumulate(grads, *a, ga);
            }
            Op::ClampMin(a, floor) => {
                let x = self.value(*a);
                let ga = Zip::from(g)
                    .and(x)
                    .map_collect(|&g, &x| if x > *floor { g } else { 0.0 });
                self.accumulate(grads, *a, ga);
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                let ga = Zip::from(g)
                    .and(x)
                    .map_collect(|&g, &x| if x > 0.0 { g } else { slope * g });
                self.accumulate(grads, *a, ga);
            }
            Op::Elu(a) => {
                let x = self.value(*a);
                let ga = Zip::from(g)
                    .and(x)
                    .map_collect(|&g, &x| if x > 0.0 { g } else { g * x.exp() });
                self.accumulate(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = Zip::from(g).and(y).map_collect(|&g, &s| g * s * (1.0 - s));
                self.accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let ga = Zip::from(g).and(y).map_collect(|&g, &t| g * (1.0 - t * t));
                self.accumulate(grads, *a, ga);
            }
            Op::LogSigmoid(a) => {
                let x = self.value(*a);
                let ga = Zip::from(g).and(x).map_collect(|&g, &x| g * sigmoid(-x));
                self.accumulate(grads, *a, ga);
            }
            Op::SegmentSoftmax(a, segments) => {
                let cols = y.ncols();
                let mut dot = Array2::<f64>::zeros((segments.count(), cols));
                for ((gr, yr), &s) in g.rows().into_iter().zip(y.rows()).zip(segments.ids()) {
                    for c in 0..cols {
                        dot[[s, c]] += gr[c] * yr[c];
                    }
                }
                let mut ga = Array2::zeros(y.dim());
                for (((mut out, gr), yr), &s) in ga
                    .rows_mut()
                    .into_iter()
                    .zip(g.rows())
                    .zip(y.rows())
                    .zip(segments.ids())
                {
                    for c in 0..cols {
                        out[c] = yr[c] * (gr[c] - dot[[s, c]]);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::LogSoftmaxRows(a) => {
                let mut ga = g.clone();
                for ((mut out, gr), yr) in ga.rows_mut().into_iter().zip(g.rows()).zip(y.rows()) {
                    let total = gr.sum();
                    for (o, &ly) in out.iter_mut().zip(yr) {
                        *o -= ly.exp() * total;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let ga = Array2::from_elem(self.shape(*a), g[[0, 0]]);
                self.accumulate(grads, *a, ga);
            }
            Op::SumRows(a) => {
                let ga = g.broadcast(self.shape(*a)).expect("column").to_owned();
                self.accumulate(grads, *a, ga);
            }
            Op::SumCols(a) => {
                let ga = g.broadcast(self.shape(*a)).expect("row").to_owned();
                self.accumulate(grads, *a, ga);
            }
            Op::FrobeniusSq(a) => {
                let ga = self.value(*a) * (2.0 * g[[0, 0]]);
                self.accumulate(grads, *a, ga);
            }
            Op::BceWithLogits {
                logits,
                targets,
                pos_weight,
            } => {
                let x = self.value(*logits);
                let scale = g[[0, 0]] / x.len() as f64;
                let ga = Zip::from(x).and(targets.as_ref()).map_collect(|&x, &t| {
                    -scale * (pos_weight * t * sigmoid(-x) - (1.0 - t) * sigmoid(x))
                });
                self.accumulate(grads, *logits, ga);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_row_segment_softmax_is_one_with_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[3.7]], true);
        let seg = Segments::new(vec![0], 1).unwrap();
        let y = tape.softmax_over_segments(x, &seg).unwrap();
        assert_eq!(tape.value(y), &array![[1.0]]);
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &array![[0.0]]);
    }

    #[test]
    fn frobenius_of_zero_is_zero_with_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Array2::zeros((3, 2)), true);
        let f = tape.frobenius_sq(x);
        assert_eq!(tape.scalar(f), 0.0);
        let grads = tape.backward(f).unwrap();
        assert!(grads.get(x).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn segment_softmax_normalizes_each_segment() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[1.0, 0.0], [2.0, 5.0], [0.5, -1.0], [9.0, 9.0]], false);
        let seg = Segments::new(vec![0, 0, 1, 0], 2).unwrap();
        let y = tape.softmax_over_segments(x, &seg).unwrap();
        let v = tape.value(y);
        for c in 0..2 {
            let s0 = v[[0, c]] + v[[1, c]] + v[[3, c]];
            assert!((s0 - 1.0).abs() < 1e-12);
            assert!((v[[2, c]] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Array2::zeros((2, 3)));
        let b = tape.constant(Array2::zeros((2, 3)));
        match tape.matmul(a, b) {
            Err(Error::Dimension { left, right, .. }) => {
                assert_eq!(left, (2, 3));
                assert_eq!(right, (2, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
        let c = tape.constant(Array2::zeros((3, 2)));
        assert!(tape.add(a, c).is_err());
    }

    #[test]
    fn log_of_non_positive_is_a_domain_error() {
        let mut tape = Tape::new();
        let a = tape.constant(array![[1.0, 0.0]]);
        assert!(matches!(tape.log(a), Err(Error::Domain { .. })));
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new();
        let a = tape.leaf(Array2::ones((2, 2)), true);
        assert!(matches!(tape.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn broadcast_add_reduces_gradient_to_operand_shape() {
        let mut tape = Tape::new();
        let m = tape.leaf(Array2::ones((3, 2)), true);
        let row = tape.leaf(array![[1.0, 2.0]], true);
        let col = tape.leaf(array![[1.0], [2.0], [3.0]], true);
        let s = tape.add(m, row).unwrap();
        let s = tape.add(col, s).unwrap();
        let loss = tape.sum(s);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(row).unwrap(), &array![[3.0, 3.0]]);
        assert_eq!(grads.get(col).unwrap(), &array![[2.0], [2.0], [2.0]]);
        assert_eq!(grads.get(m).unwrap(), &Array2::ones((3, 2)));
    }

    #[test]
    fn reused_value_accumulates_both_paths() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[3.0]], true);
        let y = tape.mul(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap()[[0, 0]], 6.0);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[3.0]], true);
        let c = tape.constant(array![[2.0]]);
        let y = tape.mul(x, c).unwrap();
        let grads = tape.backward(y).unwrap();
        assert!(grads.get(c).is_none());
        assert!(grads.get(y).is_none());
        assert_eq!(grads.get(x).unwrap()[[0, 0]], 2.0);
    }

    #[test]
    fn log_sigmoid_is_stable_at_extremes() {
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
        assert!(log_sigmoid(800.0).abs() < 1e-300);
        assert!((sigmoid(-800.0)).abs() < 1e-300);
    }
}
