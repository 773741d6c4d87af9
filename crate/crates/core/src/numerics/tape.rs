//! Reverse-mode differentiation over a Wengert list.
//!
//! Every operation appends a node holding its forward value and the handles of
//! its inputs. Nodes are appended in evaluation order, so the list is already
//! topologically sorted and [`Tape::backward`] only has to walk it in reverse.
//! Values produced from untracked inputs (constants, data) carry no gradient
//! and are skipped during the backward sweep.

use std::collections::HashMap;
use std::f64::consts::LN_10;
use std::sync::Arc;

use super::tensor::{matmul_into, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Sigmoid,
    Tanh,
    Relu,
    /// `log10(x + 1)`
    Log10p1,
    /// `10^x - 1`, the inverse of [`UnaryOp::Log10p1`].
    Pow10m1,
    Sqrt,
    Abs,
    Square,
    Neg,
}

impl UnaryOp {
    fn name(self) -> &'static str {
        match self {
            UnaryOp::Sigmoid => "sigmoid",
            UnaryOp::Tanh => "tanh",
            UnaryOp::Relu => "relu",
            UnaryOp::Log10p1 => "log10p1",
            UnaryOp::Pow10m1 => "pow10m1",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Abs => "abs",
            UnaryOp::Square => "square",
            UnaryOp::Neg => "neg",
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            UnaryOp::Sigmoid => sigmoid(x),
            UnaryOp::Tanh => x.tanh(),
            UnaryOp::Relu => x.max(0.0),
            UnaryOp::Log10p1 => log10p1(x),
            UnaryOp::Pow10m1 => pow10m1(x),
            UnaryOp::Sqrt => x.sqrt(),
            UnaryOp::Abs => x.abs(),
            UnaryOp::Square => x * x,
            UnaryOp::Neg => -x,
        }
    }

    /// dy/dx given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryOp::Sigmoid => y * (1.0 - y),
            UnaryOp::Tanh => 1.0 - y * y,
            UnaryOp::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryOp::Log10p1 => 1.0 / ((x + 1.0) * LN_10),
            UnaryOp::Pow10m1 => (y + 1.0) * LN_10,
            UnaryOp::Sqrt => 0.5 / y,
            UnaryOp::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            UnaryOp::Square => 2.0 * x,
            UnaryOp::Neg => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
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

pub fn log10p1(x: f64) -> f64 {
    x.ln_1p() / LN_10
}

pub fn pow10m1(x: f64) -> f64 {
    (x * LN_10).exp_m1()
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Unary(UnaryOp, Var),
    Binary(BinaryOp, Var, Var),
    Scale(Var, f64),
    Shift(Var),
    MatMul(Var, Var),
    Sum(Var),
    ConcatCols(Vec<Var>),
    AddRow(Var, Var),
    MulRow(Var, Var),
    SegmentMean(Var, usize),
    SegmentRepeat(Var, usize),
    BlockMatMul(Arc<[f64]>, usize, Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Gradients of a scalar with respect to every tracked leaf.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_var: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.by_var.get(&var)
    }

    pub fn len(&self) -> usize {
        self.by_var.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_var.is_empty()
    }
}

/// Single-threaded operation record. One tape per forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        })
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    f(buf);
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn is_tracked(&self, var: Var) -> bool {
        self.nodes[var.0].tracked
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, value: Tensor, op: Op, tracked: bool) -> Result<Var> {
        check_finite(name, &value)?;
        Ok(self.push(value, op, tracked))
    }

    /// Records a leaf whose gradient will be reported by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.push_checked("param", value, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push_checked("constant", value, Op::Leaf, false)
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| op.apply(x));
        let tracked = self.is_tracked(a);
        self.push_checked(op.name(), value, Op::Unary(op, a), tracked)
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op.name(), ta, tb)?;
        let data: Vec<f64> = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| match op {
                BinaryOp::Add => x + y,
                BinaryOp::Sub => x - y,
                BinaryOp::Mul => x * y,
                BinaryOp::Div => x / y,
            })
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let tracked = self.is_tracked(a) || self.is_tracked(b);
        self.push_checked(op.name(), value, Op::Binary(op, a, b), tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Relu, a)
    }

    /// Tensor times scalar.
    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x * s);
        let tracked = self.is_tracked(a);
        self.push_checked("scale", value, Op::Scale(a, s), tracked)
    }

    /// Tensor plus scalar.
    pub fn shift(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x + s);
        let tracked = self.is_tracked(a);
        self.push_checked("shift", value, Op::Shift(a), tracked)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = super::tensor::matmul(self.value(a), self.value(b))?;
        let tracked = self.is_tracked(a) || self.is_tracked(b);
        self.push_checked("matmul", value, Op::MatMul(a, b), tracked)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total: f64 = self.value(a).data().iter().sum();
        let tracked = self.is_tracked(a);
        self.push_checked("sum", Tensor::scalar(total), Op::Sum(a), tracked)
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat_cols: no inputs".into()))?;
        let (rows, _) = self.value(first).dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2("concat_cols")?;
            if r != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.value(first).shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..rows {
                data[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let value = Tensor::new(vec![rows, total], data)?;
        let tracked = parts.iter().any(|&p| self.is_tracked(p));
        self.push_checked("concat_cols", value, Op::ConcatCols(parts.to_vec()), tracked)
    }

    fn row_op_check(&self, op: &'static str, a: Var, row: Var) -> Result<(usize, usize)> {
        let (r, c) = self.value(a).dims2(op)?;
        let rs = self.value(row).shape();
        if rs != [1, c] {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.value(a).shape().to_vec(),
                right: rs.to_vec(),
            });
        }
        Ok((r, c))
    }

    /// Adds a `1 x d` row to every row of an `n x d` matrix (bias add).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.row_op_check("add_row", a, row)?;
        let bias = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for i in 0..r {
            for (v, b) in data[i * c..(i + 1) * c].iter_mut().zip(bias) {
                *v += b;
            }
        }
        let value = Tensor::new(vec![r, c], data)?;
        let tracked = self.is_tracked(a) || self.is_tracked(row);
        self.push_checked("add_row", value, Op::AddRow(a, row), tracked)
    }

    /// Multiplies every row of an `n x d` matrix elementwise by a `1 x d` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.row_op_check("mul_row", a, row)?;
        let scale = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for i in 0..r {
            for (v, s) in data[i * c..(i + 1) * c].iter_mut().zip(scale) {
                *v *= s;
            }
        }
        let value = Tensor::new(vec![r, c], data)?;
        let tracked = self.is_tracked(a) || self.is_tracked(row);
        self.push_checked("mul_row", value, Op::MulRow(a, row), tracked)
    }

    /// Column means over consecutive groups of `seg` rows: `(g*seg) x d -> g x d`.
    pub fn segment_mean(&mut self, a: Var, seg: usize) -> Result<Var> {
        let (r, c) = self.value(a).dims2("segment_mean")?;
        if seg == 0 || r % seg != 0 {
            return Err(TensorError::Invalid(format!(
                "segment_mean: {r} rows do not split into segments of {seg}"
            )));
        }
        let groups = r / seg;
        let src = self.value(a).data();
        let mut data = vec![0.0; groups * c];
        for g in 0..groups {
            let out = &mut data[g * c..(g + 1) * c];
            for i in 0..seg {
                let row = &src[(g * seg + i) * c..(g * seg + i + 1) * c];
                for (o, v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
            for o in out.iter_mut() {
                *o /= seg as f64;
            }
        }
        let value = Tensor::new(vec![groups, c], data)?;
        let tracked = self.is_tracked(a);
        self.push_checked("segment_mean", value, Op::SegmentMean(a, seg), tracked)
    }

    /// Repeats each row `seg` times: `g x d -> (g*seg) x d`.
    pub fn segment_repeat(&mut self, a: Var, seg: usize) -> Result<Var> {
        let (g, c) = self.value(a).dims2("segment_repeat")?;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(g * seg * c);
        for i in 0..g {
            for _ in 0..seg {
                data.extend_from_slice(&src[i * c..(i + 1) * c]);
            }
        }
        let value = Tensor::new(vec![g * seg, c], data)?;
        let tracked = self.is_tracked(a);
        self.push_checked("segment_repeat", value, Op::SegmentRepeat(a, seg), tracked)
    }

    /// Left-multiplies each `seg`-row block of `a` by its own constant
    /// `seg x seg` coefficient matrix (`coeffs` holds the blocks row-major,
    /// back to back). The coefficients are not differentiated.
    pub fn block_matmul(&mut self, coeffs: Arc<[f64]>, seg: usize, a: Var) -> Result<Var> {
        let (r, c) = self.value(a).dims2("block_matmul")?;
        if seg == 0 || r % seg != 0 || coeffs.len() != (r / seg) * seg * seg {
            return Err(TensorError::ShapeMismatch {
                op: "block_matmul",
                left: vec![coeffs.len()],
                right: self.value(a).shape().to_vec(),
            });
        }
        check_finite("block_matmul", &Tensor::new(vec![coeffs.len()], coeffs.to_vec())?)?;
        let src = self.value(a).data();
        let mut data = vec![0.0; r * c];
        for g in 0..r / seg {
            let block = &coeffs[g * seg * seg..(g + 1) * seg * seg];
            let x = &src[g * seg * c..(g + 1) * seg * c];
            matmul_into(block, x, &mut data[g * seg * c..(g + 1) * seg * c], seg, seg, c);
        }
        let value = Tensor::new(vec![r, c], data)?;
        let tracked = self.is_tracked(a);
        self.push_checked("block_matmul", value, Op::BlockMatMul(coeffs, seg, a), tracked)
    }

    /// Propagates adjoints from a scalar `loss` back to every tracked leaf.
    ///
    /// Tracked leaves that the loss does not depend on receive a zero gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.len() != 1 {
            return Err(TensorError::NotScalar {
                shape: loss_node.value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if loss_node.tracked {
            grads[loss.0] = Some(vec![1.0]);
        }
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            if let Op::Leaf = node.op {
                let g = grads[idx]
                    .take()
                    .unwrap_or_else(|| vec![0.0; node.value.len()]);
                let t = Tensor::new(node.value.shape().to_vec(), g)?;
                check_finite("backward", &t)?;
                out.by_var.insert(Var(idx), t);
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads)?;
        }
        // Tracked leaves recorded after the loss cannot influence it.
        for (idx, node) in self.nodes.iter().enumerate().skip(loss.0 + 1) {
            if node.tracked && matches!(node.op, Op::Leaf) {
                out.by_var
                    .insert(Var(idx), Tensor::zeros(node.value.shape()));
            }
        }
        Ok(out)
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let tracked = |v: Var| self.nodes[v.0].tracked;
        match &node.op {
            Op::Leaf => {}
            Op::Unary(op, a) => {
                if tracked(*a) {
                    let x = self.value(*a).data();
                    let y = node.value.data();
                    accumulate(&mut grads[a.0], x.len(), |buf| {
                        for i in 0..buf.len() {
                            buf[i] += g[i] * op.derivative(x[i], y[i]);
                        }
                    });
                }
            }
            Op::Binary(op, a, b) => {
                let xa = self.value(*a).data();
                let xb = self.value(*b).data();
                if tracked(*a) {
                    accumulate(&mut grads[a.0], xa.len(), |buf| {
                        for i in 0..buf.len() {
                            buf[i] += match op {
                                BinaryOp::Add | BinaryOp::Sub => g[i],
                                BinaryOp::Mul => g[i] * xb[i],
                                BinaryOp::Div => g[i] / xb[i],
                            };
                        }
                    });
                }
                if tracked(*b) {
                    accumulate(&mut grads[b.0], xb.len(), |buf| {
                        for i in 0..buf.len() {
                            buf[i] += match op {
                                BinaryOp::Add => g[i],
                                BinaryOp::Sub => -g[i],
                                BinaryOp::Mul => g[i] * xa[i],
                                BinaryOp::Div => -g[i] * xa[i] / (xb[i] * xb[i]),
                            };
                        }
                    });
                }
            }
            Op::Scale(a, s) => {
                if tracked(*a) {
                    accumulate(&mut grads[a.0], g.len(), |buf| {
                        for (b, gi) in buf.iter_mut().zip(g) {
                            *b += gi * s;
                        }
                    });
                }
            }
            Op::Shift(a) => {
                if tracked(*a) {
                    accumulate(&mut grads[a.0], g.len(), |buf| {
                        for (b, gi) in buf.iter_mut().zip(g) {
                            *b += gi;
                        }
                    });
                }
            }
            Op::MatMul(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let (m, k) = ta.dims2("matmul")?;
                let (_, n) = tb.dims2("matmul")?;
                if tracked(*a) {
                    // dA = dC * B^T
                    let bt = tb.transpose()?;
                    accumulate(&mut grads[a.0], m * k, |buf| matmul_into(g, bt.data(), buf, m, n, k));
                }
                if tracked(*b) {
                    // dB = A^T * dC
                    let ad = ta.data();
                    accumulate(&mut grads[b.0], k * n, |buf| {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let av = ad[i * k + p];
                                let out = &mut buf[p * n..(p + 1) * n];
                                for (o, gv) in out.iter_mut().zip(grow) {
                                    *o += av * gv;
                                }
                            }
                        }
                    });
                }
            }
            Op::Sum(a) => {
                if tracked(*a) {
                    let len = self.value(*a).len();
                    accumulate(&mut grads[a.0], len, |buf| {
                        for b in buf.iter_mut() {
                            *b += g[0];
                        }
                    });
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = node.value.dims2("concat_cols")?;
                let mut offset = 0;
                for &p in parts {
                    let (_, w) = self.value(p).dims2("concat_cols")?;
                    if tracked(p) {
                        accumulate(&mut grads[p.0], rows * w, |buf| {
                            for i in 0..rows {
                                let src = &g[i * total + offset..i * total + offset + w];
                                for (b, s) in buf[i * w..(i + 1) * w].iter_mut().zip(src) {
                                    *b += s;
                                }
                            }
                        });
                    }
                    offset += w;
                }
            }
            Op::AddRow(a, row) => {
                let (r, c) = node.value.dims2("add_row")?;
                if tracked(*a) {
                    accumulate(&mut grads[a.0], r * c, |buf| {
                        for (b, gi) in buf.iter_mut().zip(g) {
                            *b += gi;
                        }
                    });
                }
                if tracked(*row) {
                    accumulate(&mut grads[row.0], c, |buf| {
                        for i in 0..r {
                            for (b, gi) in buf.iter_mut().zip(&g[i * c..(i + 1) * c]) {
                                *b += gi;
                            }
                        }
                    });
                }
            }
            Op::MulRow(a, row) => {
                let (r, c) = node.value.dims2("mul_row")?;
                let xa = self.value(*a).data();
                let xr = self.value(*row).data();
                if tracked(*a) {
                    accumulate(&mut grads[a.0], r * c, |buf| {
                        for i in 0..r {
                            for j in 0..c {
                                buf[i * c + j] += g[i * c + j] * xr[j];
                            }
                        }
                    });
                }
                if tracked(*row) {
                    accumulate(&mut grads[row.0], c, |buf| {
                        for i in 0..r {
                            for j in 0..c {
                                buf[j] += g[i * c + j] * xa[i * c + j];
                            }
                        }
                    });
                }
            }
            Op::SegmentMean(a, seg) => {
                if tracked(*a) {
                    let (r, c) = self.value(*a).dims2("segment_mean")?;
                    let inv = 1.0 / *seg as f64;
                    accumulate(&mut grads[a.0], r * c, |buf| {
                        for i in 0..r {
                            let grow = &g[(i / seg) * c..(i / seg + 1) * c];
                            for (b, gi) in buf[i * c..(i + 1) * c].iter_mut().zip(grow) {
                                *b += gi * inv;
                            }
                        }
                    });
                }
            }
            Op::SegmentRepeat(a, seg) => {
                if tracked(*a) {
                    let (r, c) = node.value.dims2("segment_repeat")?;
                    accumulate(&mut grads[a.0], (r / seg) * c, |buf| {
                        for i in 0..r {
                            let out = &mut buf[(i / seg) * c..(i / seg + 1) * c];
                            for (b, gi) in out.iter_mut().zip(&g[i * c..(i + 1) * c]) {
                                *b += gi;
                            }
                        }
                    });
                }
            }
            Op::BlockMatMul(coeffs, seg, a) => {
                if tracked(*a) {
                    let seg = *seg;
                    let (r, c) = node.value.dims2("block_matmul")?;
                    accumulate(&mut grads[a.0], r * c, |buf| {
                        for blk in 0..r / seg {
                            let coef = &coeffs[blk * seg * seg..(blk + 1) * seg * seg];
                            for v in 0..seg {
                                let grow = &g[(blk * seg + v) * c..(blk * seg + v + 1) * c];
                                for u in 0..seg {
                                    let w = coef[v * seg + u];
                                    if w == 0.0 {
                                        continue;
                                    }
                                    let out = &mut buf[(blk * seg + u) * c..(blk * seg + u + 1) * c];
                                    for (o, gv) in out.iter_mut().zip(grow) {
                                        *o += w * gv;
                                    }
                                }
                            }
                        }
                    });
                }
            }
        }
        Ok(())
    }
}
