use crate::autodiff::tensor::{gemm, Layout, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Softmax(Var),
    LogSoftmax(Var),
    ReduceSum(Var),
    RowSum(Var),
    ScaleRows(Var, Var),
    GatherRows(Var, Vec<usize>),
    StopGradient,
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records primitive operations in execution order for reverse-mode
/// differentiation.
///
/// All operands are 2-D. The only implicit expansion is the row-wise
/// bias add in [`Tape::add_row`]; every other shape disagreement is an
/// [`Error::Shape`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, shapes: &[&Tensor]) -> Error {
    let shapes = shapes.iter().map(|t| format!("{:?}", t.shape())).collect::<Vec<_>>().join(" x ");
    Error::Shape { op, shapes }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Leaf | Op::StopGradient => false,
            Op::MatMul(a, b)
            | Op::MatMulNt(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::AddRow(a, b)
            | Op::Mul(a, b)
            | Op::ScaleRows(a, b) => self.needs_grad(*a) || self.needs_grad(*b),
            Op::Concat(xs) => xs.iter().any(|x| self.needs_grad(*x)),
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Slice(a, _)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::ReduceSum(a)
            | Op::RowSum(a)
            | Op::GatherRows(a, _) => self.needs_grad(*a),
        };
        self.push_raw(value, op, needs_grad)
    }

    /// `a (m x k) * b (k x n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(shape_err("matmul", &[ta, tb]));
        }
        let mut out = Tensor::zeros(ta.rows(), tb.cols());
        gemm(ta, Layout::Normal, tb, Layout::Normal, 0.0, &mut out);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a (m x k) * b^T` where `b` is `n x k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(shape_err("matmul_nt", &[ta, tb]));
        }
        let mut out = Tensor::zeros(ta.rows(), tb.rows());
        gemm(ta, Layout::Normal, tb, Layout::Transposed, 0.0, &mut out);
        Ok(self.push(out, Op::MatMulNt(a, b)))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, &[ta, tb]));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.rows(), ta.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Adds the `1 x n` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(shape_err("add_row", &[ta, tb]));
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, bias)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    /// Column-wise concatenation; all parts share the row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::Shape { op: "concat", shapes: "no operands".into() });
        };
        let rows = self.value(*first).rows();
        if let Some(bad) = parts.iter().find(|p| self.value(**p).rows() != rows) {
            return Err(shape_err("concat", &[self.value(*first), self.value(*bad)]));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..start + len`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        if start + len > ta.cols() {
            return Err(Error::Shape {
                op: "slice",
                shapes: format!("{:?} columns {start}..{}", ta.shape(), start + len),
            });
        }
        let mut data = Vec::with_capacity(ta.rows() * len);
        for r in 0..ta.rows() {
            data.extend_from_slice(&ta.row(r)[start..start + len]);
        }
        let out = Tensor::from_vec(ta.rows(), len, data)?;
        Ok(self.push(out, Op::Slice(a, start)))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let out = row_softmax(self.value(a));
        self.push(out, Op::Softmax(a))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mut out = ta.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let lse = log_sum_exp(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.push(out, Op::LogSoftmax(a))
    }

    /// Sum of all entries as a `1 x 1` tensor.
    pub fn reduce_sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::ReduceSum(a))
    }

    /// Per-row sums as an `m x 1` column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let out = Tensor::column((0..ta.rows()).map(|r| ta.row(r).iter().sum()).collect());
        self.push(out, Op::RowSum(a))
    }

    /// Multiplies row `i` of `a (m x n)` by entry `i` of the column `s (m x 1)`.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (ta, ts) = (self.value(a), self.value(s));
        if ts.cols() != 1 || ts.rows() != ta.rows() {
            return Err(shape_err("scale_rows", &[ta, ts]));
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            let f = ts.data()[r];
            for v in out.row_mut(r) {
                *v *= f;
            }
        }
        Ok(self.push(out, Op::ScaleRows(a, s)))
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        if let Some(&bad) = indices.iter().find(|&&i| i >= tt.rows()) {
            return Err(Error::Shape {
                op: "gather_rows",
                shapes: format!("{:?} index {bad}", tt.shape()),
            });
        }
        let mut data = Vec::with_capacity(indices.len() * tt.cols());
        for &i in indices {
            data.extend_from_slice(tt.row(i));
        }
        let out = Tensor::from_vec(indices.len(), tt.cols(), data)?;
        Ok(self.push(out, Op::GatherRows(table, indices.to_vec())))
    }

    /// Identity forward; blocks every gradient in the backward pass.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let out = self.value(a).clone();
        self.push(out, Op::StopGradient)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<GradientMap> {
        let lv = self.value(loss);
        if lv.shape() != [1, 1] {
            return Err(shape_err("backward (loss must be scalar)", &[lv]));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].needs_grad || matches!(self.nodes[loss.0].op, Op::Leaf) {
            grads[loss.0] = Some(Tensor::scalar(1.0));
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(GradientMap { grads })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut Tensor> {
        if !self.nodes[v.0].needs_grad && !self.is_param(v) {
            return None;
        }
        let shape = self.nodes[v.0].value.shape();
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(shape[0], shape[1])))
    }

    fn is_param(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf) && self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::StopGradient => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if let Some(ga) = self.slot(grads, *a) {
                    gemm(g, Layout::Normal, tb, Layout::Transposed, 1.0, ga);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm(ta, Layout::Transposed, g, Layout::Normal, 1.0, gb);
                }
            }
            Op::MatMulNt(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if let Some(ga) = self.slot(grads, *a) {
                    gemm(g, Layout::Normal, tb, Layout::Normal, 1.0, ga);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm(g, Layout::Transposed, ta, Layout::Normal, 1.0, gb);
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gb.add_assign(g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gb.add_scaled(g, -1.0);
                }
            }
            Op::AddRow(a, bias) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    for r in 0..g.rows() {
                        for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if let Some(ga) = self.slot(grads, *a) {
                    for ((o, d), y) in ga.data_mut().iter_mut().zip(g.data()).zip(tb.data()) {
                        *o += d * y;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((o, d), x) in gb.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                        *o += d * x;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_scaled(g, *s);
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((o, d), y) in ga.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                        *o += d * (1.0 - y * y);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((o, d), y) in ga.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                        *o += d * y * (1.0 - y);
                    }
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = val(*p).cols();
                    if let Some(gp) = self.slot(grads, *p) {
                        for r in 0..g.rows() {
                            for (o, v) in gp.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + w]) {
                                *o += v;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Slice(a, start) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let w = g.cols();
                    for r in 0..g.rows() {
                        for (o, v) in ga.row_mut(r)[*start..*start + w].iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let y = &node.value;
                    for r in 0..g.rows() {
                        let (gr, yr) = (g.row(r), y.row(r));
                        let dot: f64 = gr.iter().zip(yr).map(|(d, p)| d * p).sum();
                        for ((o, d), p) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *o += p * (d - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let y = &node.value;
                    for r in 0..g.rows() {
                        let (gr, yr) = (g.row(r), y.row(r));
                        let total: f64 = gr.iter().sum();
                        for ((o, d), l) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *o += d - l.exp() * total;
                        }
                    }
                }
            }
            Op::ReduceSum(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let d = g.item();
                    for o in ga.data_mut() {
                        *o += d;
                    }
                }
            }
            Op::RowSum(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for r in 0..ga.rows() {
                        let d = g.data()[r];
                        for o in ga.row_mut(r) {
                            *o += d;
                        }
                    }
                }
            }
            Op::ScaleRows(a, s) => {
                let (ta, ts) = (val(*a), val(*s));
                if let Some(ga) = self.slot(grads, *a) {
                    for r in 0..g.rows() {
                        let f = ts.data()[r];
                        for (o, d) in ga.row_mut(r).iter_mut().zip(g.row(r)) {
                            *o += d * f;
                        }
                    }
                }
                if let Some(gs) = self.slot(grads, *s) {
                    for r in 0..g.rows() {
                        let dot: f64 = g.row(r).iter().zip(ta.row(r)).map(|(d, x)| d * x).sum();
                        gs.data_mut()[r] += dot;
                    }
                }
            }
            Op::GatherRows(table, indices) => {
                if let Some(gt) = self.slot(grads, *table) {
                    for (r, &i) in indices.iter().enumerate() {
                        for (o, v) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
            }
        }
    }
}

/// Gradients keyed by tape node.
pub struct GradientMap {
    grads: Vec<Option<Tensor>>,
}

impl GradientMap {
    /// Gradient of `v`, or `None` if no differentiable path reached it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zero-filled when unreached.
    pub fn grad_or_zeros(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| {
            let [r, c] = tape.value(v).shape();
            Tensor::zeros(r, c)
        })
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

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn row_softmax(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}
