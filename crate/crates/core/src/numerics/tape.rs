//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node to the [`Tape`] holding its output value.
//! Nodes whose inputs do not require gradients are stored as plain values and
//! skipped during the backward sweep, so inference and training share one code
//! path. [`Tape::backward`] consumes the tape; build a fresh one per step.

use std::sync::Arc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row-compressed sparse matrix used as a fixed (non-differentiable) linear
/// operator, e.g. weighted neighbor averaging.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub num_rows: usize,
    pub num_cols: usize,
    pub offsets: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.offsets[i]..self.offsets[i + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    fn apply(&self, x: &Tensor) -> Tensor {
        let d = x.cols();
        let mut out = Tensor::zeros(self.num_rows, d);
        for u in 0..self.num_rows {
            let (cols, vals) = self.row(u);
            let o = out.row_mut(u);
            for (&v, &a) in cols.iter().zip(vals) {
                for (acc, &xv) in o.iter_mut().zip(x.row(v)) {
                    *acc += a * xv;
                }
            }
        }
        out
    }

    fn apply_transpose(&self, g: &Tensor) -> Tensor {
        let d = g.cols();
        let mut out = Tensor::zeros(self.num_cols, d);
        for u in 0..self.num_rows {
            let (cols, vals) = self.row(u);
            let gu = g.row(u).to_vec();
            for (&v, &a) in cols.iter().zip(vals) {
                for (acc, &gv) in out.row_mut(v).iter_mut().zip(&gu) {
                    *acc += a * gv;
                }
            }
        }
        out
    }
}

/// Batch statistics produced by [`Tape::batch_norm`].
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance per column.
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    MeanRows(Var),
    SumCols(Var),
    Sum(Var),
    Mean(Var),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    SpMM(Arc<CsrMatrix>, Var),
    BatchNorm(Var, Vec<f64>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. One tape per training or adaptation step.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
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

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, x: Var, value: Tensor, op: Op) -> Var {
        let rg = self.any_grad(&[x]);
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, value: Tensor, op: Op) -> Var {
        let rg = self.any_grad(&[a, b]);
        self.push(value, op, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(op, format!("{:?} vs {:?}", sa, sb)));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.binary(a, b, out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = zip(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.binary(a, b, out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = zip(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.binary(a, b, out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = zip(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.binary(a, b, out, Op::Mul(a, b)))
    }

    fn check_row(&self, op: &'static str, x: Var, r: Var) -> Result<()> {
        let (xr, xc) = self.value(x).shape();
        let (rr, rc) = self.value(r).shape();
        if rr != 1 || rc != xc {
            return Err(Error::dim(op, format!("{}x{} with row {}x{}", xr, xc, rr, rc)));
        }
        Ok(())
    }

    /// `x + r` with the `1×d` row `r` broadcast over every row of `x`.
    pub fn add_row(&mut self, x: Var, r: Var) -> Result<Var> {
        self.check_row("add_row", x, r)?;
        let mut out = self.value(x).clone();
        let row = self.value(r).data().to_vec();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&row) {
                *o += b;
            }
        }
        Ok(self.binary(x, r, out, Op::AddRow(x, r)))
    }

    /// `x ⊙ r` with the `1×d` row `r` broadcast over every row of `x`.
    pub fn mul_row(&mut self, x: Var, r: Var) -> Result<Var> {
        self.check_row("mul_row", x, r)?;
        let mut out = self.value(x).clone();
        let row = self.value(r).data().to_vec();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&row) {
                *o *= b;
            }
        }
        Ok(self.binary(x, r, out, Op::MulRow(x, r)))
    }

    /// Scales row `i` of `x` by `c[i]` where `c` is `n×1`.
    pub fn mul_col(&mut self, x: Var, c: Var) -> Result<Var> {
        let (xr, xc) = self.value(x).shape();
        let (cr, cc) = self.value(c).shape();
        if cc != 1 || cr != xr {
            return Err(Error::dim("mul_col", format!("{}x{} with column {}x{}", xr, xc, cr, cc)));
        }
        let mut out = self.value(x).clone();
        let col = self.value(c).data().to_vec();
        for (i, s) in col.iter().enumerate() {
            for o in out.row_mut(i) {
                *o *= s;
            }
        }
        Ok(self.binary(x, c, out, Op::MulCol(x, c)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.unary(x, out, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v + s);
        self.unary(x, out, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.unary(x, out, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.unary(x, out, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.unary(x, out, Op::Sigmoid(x))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let mut out = src.clone();
        for i in 0..src.rows() {
            let row = super::tensor::softmax_row(src.row(i));
            out.row_mut(i).copy_from_slice(&row);
        }
        self.unary(x, out, Op::Softmax(x))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let mut out = src.clone();
        for i in 0..src.rows() {
            let row = src.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
            for (o, &z) in out.row_mut(i).iter_mut().zip(row) {
                *o = z - lse;
            }
        }
        self.unary(x, out, Op::LogSoftmax(x))
    }

    /// Mean over rows: `n×d → 1×d`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let (n, d) = src.shape();
        if n == 0 {
            return Err(Error::Degenerate("mean over zero rows".into()));
        }
        let mut acc = vec![0.0; d];
        for row in src.iter_rows() {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        let out = Tensor::row_vector(acc.into_iter().map(|a| a / n as f64).collect());
        Ok(self.unary(x, out, Op::MeanRows(x)))
    }

    /// Sum across columns: `n×d → n×1`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let out = Tensor::column(src.iter_rows().map(|r| r.iter().sum()).collect());
        self.unary(x, out, Op::SumCols(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).data().iter().sum());
        self.unary(x, out, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        if src.is_empty() {
            return Err(Error::Degenerate("mean of an empty tensor".into()));
        }
        let out = Tensor::scalar(src.data().iter().sum::<f64>() / src.len() as f64);
        Ok(self.unary(x, out, Op::Mean(x)))
    }

    /// Selects rows `idx` of `x` (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let src = self.value(x);
        let d = src.cols();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            if i >= src.rows() {
                return Err(Error::Index {
                    index: i,
                    len: src.rows(),
                    what: "rows",
                });
            }
            data.extend_from_slice(src.row(i));
        }
        let out = Tensor::new(idx.len(), d, data)?;
        Ok(self.unary(x, out, Op::GatherRows(x, idx.to_vec())))
    }

    /// `out[idx[i]] += x[i]` into a zero `n_out×d` tensor.
    pub fn scatter_add_rows(&mut self, x: Var, idx: &[usize], n_out: usize) -> Result<Var> {
        let src = self.value(x);
        if idx.len() != src.rows() {
            return Err(Error::dim(
                "scatter_add_rows",
                format!("{} indices for {} rows", idx.len(), src.rows()),
            ));
        }
        let mut out = Tensor::zeros(n_out, src.cols());
        for (i, &t) in idx.iter().enumerate() {
            if t >= n_out {
                return Err(Error::Index {
                    index: t,
                    len: n_out,
                    what: "output rows",
                });
            }
            for (o, v) in out.row_mut(t).iter_mut().zip(src.row(i)) {
                *o += v;
            }
        }
        Ok(self.unary(x, out, Op::ScatterAddRows(x, idx.to_vec())))
    }

    /// `out[i] = x[i, cols[i]]` as an `n×1` column.
    pub fn pick(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let src = self.value(x);
        if cols.len() != src.rows() {
            return Err(Error::dim(
                "pick",
                format!("{} column choices for {} rows", cols.len(), src.rows()),
            ));
        }
        let mut data = Vec::with_capacity(cols.len());
        for (i, &c) in cols.iter().enumerate() {
            if c >= src.cols() {
                return Err(Error::Index {
                    index: c,
                    len: src.cols(),
                    what: "columns",
                });
            }
            data.push(src.get(i, c));
        }
        let out = Tensor::column(data);
        Ok(self.unary(x, out, Op::Pick(x, cols.to_vec())))
    }

    /// Sparse-dense product `a · x` with a constant sparse operator.
    pub fn spmm(&mut self, a: &Arc<CsrMatrix>, x: Var) -> Result<Var> {
        let src = self.value(x);
        if src.rows() != a.num_cols {
            return Err(Error::dim(
                "spmm",
                format!("operator has {} columns, input {} rows", a.num_cols, src.rows()),
            ));
        }
        let out = a.apply(src);
        Ok(self.unary(x, out, Op::SpMM(Arc::clone(a), x)))
    }

    /// Column-wise standardization with the batch's own statistics.
    pub fn batch_norm(&mut self, x: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let src = self.value(x);
        let (n, d) = src.shape();
        if n == 0 {
            return Err(Error::Degenerate("batch norm over zero rows".into()));
        }
        let mut mean = vec![0.0; d];
        for row in src.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for row in src.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut out = src.clone();
        for i in 0..n {
            for ((o, m), s) in out.row_mut(i).iter_mut().zip(&mean).zip(&inv_std) {
                *o = (*o - m) * s;
            }
        }
        let stats = BatchStats {
            mean,
            var,
            count: n,
        };
        Ok((self.unary(x, out, Op::BatchNorm(x, inv_std)), stats))
    }

    /// Reverse sweep from a scalar loss. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[id] = Some(g);
        }

        // leaves that require grad but were never reached get explicit zeros
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[id].is_none() {
                let (r, c) = node.value.shape();
                grads[id] = Some(Tensor::zeros(r, c));
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    let ga = g.matmul(&self.value(*b).transpose())?;
                    accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = self.value(*a).transpose().matmul(g)?;
                    accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.send(grads, *a, || g.clone());
                self.send(grads, *b, || g.clone());
            }
            Op::Sub(a, b) => {
                self.send(grads, *a, || g.clone());
                self.send(grads, *b, || g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                self.send(grads, *a, || zip(g, self.value(*b), |x, y| x * y));
                self.send(grads, *b, || zip(g, self.value(*a), |x, y| x * y));
            }
            Op::AddRow(x, r) => {
                self.send(grads, *x, || g.clone());
                self.send(grads, *r, || column_sums(g));
            }
            Op::MulRow(x, r) => {
                let row = self.value(*r);
                self.send(grads, *x, || {
                    let mut out = g.clone();
                    for i in 0..out.rows() {
                        for (o, s) in out.row_mut(i).iter_mut().zip(row.data()) {
                            *o *= s;
                        }
                    }
                    out
                });
                let xv = self.value(*x);
                self.send(grads, *r, || column_sums(&zip(g, xv, |a, b| a * b)));
            }
            Op::MulCol(x, c) => {
                let col = self.value(*c);
                self.send(grads, *x, || {
                    let mut out = g.clone();
                    for (i, s) in col.data().iter().enumerate() {
                        out.row_mut(i).iter_mut().for_each(|o| *o *= s);
                    }
                    out
                });
                let xv = self.value(*x);
                self.send(grads, *c, || {
                    Tensor::column(
                        g.iter_rows()
                            .zip(xv.iter_rows())
                            .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b).sum())
                            .collect(),
                    )
                });
            }
            Op::Scale(x, s) => self.send(grads, *x, || g.map(|v| v * s)),
            Op::AddScalar(x) => self.send(grads, *x, || g.clone()),
            Op::Relu(x) => self.send(grads, *x, || zip(g, y, |gv, yv| if yv > 0.0 { gv } else { 0.0 })),
            Op::Tanh(x) => self.send(grads, *x, || zip(g, y, |gv, yv| gv * (1.0 - yv * yv))),
            Op::Sigmoid(x) => self.send(grads, *x, || zip(g, y, |gv, yv| gv * yv * (1.0 - yv))),
            Op::Softmax(x) => self.send(grads, *x, || {
                let mut out = g.clone();
                for i in 0..y.rows() {
                    let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(a, b)| a * b).sum();
                    for ((o, gv), yv) in out.row_mut(i).iter_mut().zip(g.row(i)).zip(y.row(i)) {
                        *o = yv * (gv - dot);
                    }
                }
                out
            }),
            Op::LogSoftmax(x) => self.send(grads, *x, || {
                let mut out = g.clone();
                for i in 0..y.rows() {
                    let total: f64 = g.row(i).iter().sum();
                    for ((o, gv), yv) in out.row_mut(i).iter_mut().zip(g.row(i)).zip(y.row(i)) {
                        *o = gv - yv.exp() * total;
                    }
                }
                out
            }),
            Op::MeanRows(x) => {
                let (n, d) = self.value(*x).shape();
                self.send(grads, *x, || {
                    let mut out = Tensor::zeros(n, d);
                    for i in 0..n {
                        for (o, gv) in out.row_mut(i).iter_mut().zip(g.data()) {
                            *o = gv / n as f64;
                        }
                    }
                    out
                });
            }
            Op::SumCols(x) => {
                let (n, d) = self.value(*x).shape();
                self.send(grads, *x, || {
                    let mut out = Tensor::zeros(n, d);
                    for i in 0..n {
                        let gv = g.get(i, 0);
                        out.row_mut(i).iter_mut().for_each(|o| *o = gv);
                    }
                    out
                });
            }
            Op::Sum(x) => {
                let (n, d) = self.value(*x).shape();
                let gv = g.data()[0];
                self.send(grads, *x, || Tensor::full(n, d, gv));
            }
            Op::Mean(x) => {
                let (n, d) = self.value(*x).shape();
                let gv = g.data()[0] / (n * d) as f64;
                self.send(grads, *x, || Tensor::full(n, d, gv));
            }
            Op::GatherRows(x, idx) => {
                let (n, d) = self.value(*x).shape();
                self.send(grads, *x, || {
                    let mut out = Tensor::zeros(n, d);
                    for (i, &src) in idx.iter().enumerate() {
                        for (o, gv) in out.row_mut(src).iter_mut().zip(g.row(i)) {
                            *o += gv;
                        }
                    }
                    out
                });
            }
            Op::ScatterAddRows(x, idx) => {
                let d = self.value(*x).cols();
                self.send(grads, *x, || {
                    let mut data = Vec::with_capacity(idx.len() * d);
                    for &t in idx {
                        data.extend_from_slice(g.row(t));
                    }
                    Tensor::new(idx.len(), d, data).expect("scatter gradient shape")
                });
            }
            Op::Pick(x, cols) => {
                let (n, d) = self.value(*x).shape();
                self.send(grads, *x, || {
                    let mut out = Tensor::zeros(n, d);
                    for (i, &c) in cols.iter().enumerate() {
                        out.set(i, c, g.get(i, 0));
                    }
                    out
                });
            }
            Op::SpMM(a, x) => self.send(grads, *x, || a.apply_transpose(g)),
            Op::BatchNorm(x, inv_std) => self.send(grads, *x, || {
                let (n, d) = y.shape();
                let nf = n as f64;
                let mut sum_g = vec![0.0; d];
                let mut sum_gy = vec![0.0; d];
                for i in 0..n {
                    for j in 0..d {
                        sum_g[j] += g.get(i, j);
                        sum_gy[j] += g.get(i, j) * y.get(i, j);
                    }
                }
                let mut out = Tensor::zeros(n, d);
                for i in 0..n {
                    for j in 0..d {
                        let v = inv_std[j] / nf * (nf * g.get(i, j) - sum_g[j] - y.get(i, j) * sum_gy[j]);
                        out.set(i, j, v);
                    }
                }
                out
            }),
        }
        Ok(())
    }

    fn send(&self, grads: &mut [Option<Tensor>], target: Var, make: impl FnOnce() -> Tensor) {
        if self.requires_grad(target) {
            accumulate(grads, target, make());
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("zip of equal shapes")
}

fn column_sums(g: &Tensor) -> Tensor {
    let mut acc = vec![0.0; g.cols()];
    for row in g.iter_rows() {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    Tensor::row_vector(acc)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
