//! Define-by-run reverse-mode autodiff.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its output value. Nodes are appended in execution order, so the node list
//! is already topologically sorted and [`Tape::backward`] walks it once in
//! reverse. Leaves created with `requires_grad = true` accumulate gradients
//! across repeated backward calls until [`Tape::zero_grad`].

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Discriminant of a recorded operation, used for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Transpose,
    Relu,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Abs,
    Add,
    Sub,
    Mul,
    Scale,
    AddBias,
    ConcatCols,
    SliceCols,
    NormalizeRows,
    LogSoftmaxRows,
    Diagonal,
    Sum,
    Mean,
}

impl OpKind {
    pub const ALL: [OpKind; 21] = [
        OpKind::Leaf,
        OpKind::MatMul,
        OpKind::Transpose,
        OpKind::Relu,
        OpKind::Tanh,
        OpKind::Sigmoid,
        OpKind::Exp,
        OpKind::Log,
        OpKind::Abs,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::AddBias,
        OpKind::ConcatCols,
        OpKind::SliceCols,
        OpKind::NormalizeRows,
        OpKind::LogSoftmaxRows,
        OpKind::Diagonal,
        OpKind::Sum,
        OpKind::Mean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Relu => "relu",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Abs => "abs",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::AddBias => "add_bias",
            OpKind::ConcatCols => "concat_cols",
            OpKind::SliceCols => "slice_cols",
            OpKind::NormalizeRows => "normalize_rows",
            OpKind::LogSoftmaxRows => "log_softmax_rows",
            OpKind::Diagonal => "diagonal",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl std::fmt::Display for OpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    /// Input and the per-row norms.
    NormalizeRows(Var, Vec<f64>),
    LogSoftmaxRows(Var),
    Diagonal(Var),
    Sum(Var),
    Mean(Var),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Relu(_) => OpKind::Relu,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Exp(_) => OpKind::Exp,
            Op::Log(_) => OpKind::Log,
            Op::Abs(_) => OpKind::Abs,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::AddBias(..) => OpKind::AddBias,
            Op::ConcatCols(_) => OpKind::ConcatCols,
            Op::SliceCols(..) => OpKind::SliceCols,
            Op::NormalizeRows(..) => OpKind::NormalizeRows,
            Op::LogSoftmaxRows(_) => OpKind::LogSoftmaxRows,
            Op::Diagonal(_) => OpKind::Diagonal,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Row norms below this are rejected by [`Tape::normalize_rows`].
pub const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    corrupt: Option<OpKind>,
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Test fixture: perturbs the local-gradient rule of `kind` so gradient
    /// checks can be shown to catch a broken rule.
    #[doc(hidden)]
    pub fn with_corrupted_rule(kind: OpKind) -> Self {
        Self {
            nodes: Vec::new(),
            corrupt: Some(kind),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// A constant copy of `x`: same value, no gradient path back to `x`.
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.value(x).clone();
        self.constant(v)
    }

    pub fn value(&self, x: Var) -> &Tensor {
        &self.nodes[x.0].value
    }

    pub fn shape(&self, x: Var) -> &[usize] {
        self.nodes[x.0].value.shape()
    }

    pub fn requires_grad(&self, x: Var) -> bool {
        self.nodes[x.0].requires_grad
    }

    pub fn op_kind(&self, x: Var) -> OpKind {
        self.nodes[x.0].op.kind()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, x: Var) -> Option<&[f64]> {
        self.nodes[x.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.kind().name().to_string()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims2(&self, x: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::Shape {
                op,
                left: s.to_vec(),
                right: vec![0, 0],
            });
        }
        Ok((s[0], s[1]))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a, "transpose")?;
        let out = transpose_raw(self.value(a).data(), r, c);
        self.push(Tensor::matrix(c, r, out)?, Op::Transpose(a), &[a])
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let out = self.value(a).map(f);
        self.push(out, op, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu(a), |v| v.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&v| v <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        self.unary(a, Op::Log(a), f64::ln)
    }

    /// Absolute value; the backward rule uses subgradient 0 at 0.
    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let name = op.kind().name();
        self.same_shape(a, b, name)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::Scale(a, c), |v| v * c)
    }

    /// `x[n×d] + b[d]`, the bias broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, d) = self.dims2(x, "add_bias")?;
        if self.value(b).len() != d {
            return Err(Error::Shape {
                op: "add_bias",
                left: vec![n, d],
                right: self.shape(b).to_vec(),
            });
        }
        let bias = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(d) {
            for (o, &bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        self.push(Tensor::matrix(n, d, out)?, Op::AddBias(x, b), &[x, b])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat_cols of nothing"));
        }
        let (n, _) = self.dims2(parts[0], "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols")?;
            if r != n {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: self.shape(parts[0]).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        self.push(Tensor::matrix(n, total, out)?, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, d) = self.dims2(x, "slice_cols")?;
        if start >= end || end > d {
            return Err(Error::contract(format!(
                "slice_cols {start}..{end} out of range for width {d}"
            )));
        }
        let v = self.value(x);
        let mut out = Vec::with_capacity(n * (end - start));
        for i in 0..n {
            out.extend_from_slice(&v.row(i)[start..end]);
        }
        self.push(Tensor::matrix(n, end - start, out)?, Op::SliceCols(x, start), &[x])
    }

    /// Scales every row to unit Euclidean length.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.dims2(x, "normalize_rows")?;
        let v = self.value(x);
        let mut norms = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            let row = v.row(i);
            let norm = row.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm.is_nan() || norm < NORM_EPS {
                return Err(Error::DegenerateRow {
                    what: "input".into(),
                    row: i,
                    norm,
                    eps: NORM_EPS,
                });
            }
            out.extend(row.iter().map(|a| a / norm));
            norms.push(norm);
        }
        self.push(Tensor::matrix(n, d, out)?, Op::NormalizeRows(x, norms), &[x])
    }

    /// Row-wise `x - logsumexp(x)` with max subtraction.
    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.dims2(x, "log_softmax_rows")?;
        let v = self.value(x);
        if !v.is_finite() {
            return Err(Error::NonFinite("log_softmax_rows input".into()));
        }
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            let row = v.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|a| (a - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|a| a - lse));
        }
        self.push(Tensor::matrix(n, d, out)?, Op::LogSoftmaxRows(x), &[x])
    }

    /// Diagonal of a square matrix as an `[n×1]` column.
    pub fn diagonal(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.dims2(x, "diagonal")?;
        if n != d {
            return Err(Error::Shape {
                op: "diagonal",
                left: vec![n, d],
                right: vec![n, n],
            });
        }
        let v = self.value(x);
        let out = (0..n).map(|i| v.get2(i, i)).collect();
        self.push(Tensor::matrix(n, 1, out)?, Op::Diagonal(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Affine map `x·w + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    /// Populates gradients of every `requires_grad` leaf reachable from
    /// `loss`, adding to whatever earlier backward passes left there.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        fn acc(adj: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
            match &mut adj[v.0] {
                Some(a) => {
                    for (x, y) in a.iter_mut().zip(g) {
                        *x += y;
                    }
                }
                slot @ None => *slot = Some(g),
            }
        }

        let mut leaf_grads: Vec<(usize, Vec<f64>)> = Vec::new();
        for idx in (0..=loss.0).rev() {
            let Some(mut g) = adj[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if self.corrupt == Some(node.op.kind()) {
                for x in &mut g {
                    *x *= 1.01;
                }
            }
            let out = node.value.data();
            let val = |v: Var| self.nodes[v.0].value.data();
            let needs = |v: Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => leaf_grads.push((idx, g)),
                Op::MatMul(a, b) => {
                    let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let n = self.shape(*b)[1];
                    if needs(*a) {
                        let bt = transpose_raw(val(*b), k, n);
                        acc(&mut adj, *a, matmul_raw(&g, &bt, m, n, k));
                    }
                    if needs(*b) {
                        let at = transpose_raw(val(*a), m, k);
                        acc(&mut adj, *b, matmul_raw(&at, &g, k, m, n));
                    }
                }
                Op::Transpose(a) => {
                    let s = node.value.shape();
                    acc(&mut adj, *a, transpose_raw(&g, s[0], s[1]));
                }
                Op::Relu(a) => {
                    let gi = val(*a)
                        .iter()
                        .zip(&g)
                        .map(|(&x, &gg)| if x > 0.0 { gg } else { 0.0 })
                        .collect();
                    acc(&mut adj, *a, gi);
                }
                Op::Tanh(a) => {
                    let gi = out.iter().zip(&g).map(|(&y, &gg)| gg * (1.0 - y * y)).collect();
                    acc(&mut adj, *a, gi);
                }
                Op::Sigmoid(a) => {
                    let gi = out.iter().zip(&g).map(|(&y, &gg)| gg * y * (1.0 - y)).collect();
                    acc(&mut adj, *a, gi);
                }
                Op::Exp(a) => {
                    let gi = out.iter().zip(&g).map(|(&y, &gg)| gg * y).collect();
                    acc(&mut adj, *a, gi);
                }
                Op::Log(a) => {
                    let gi = val(*a).iter().zip(&g).map(|(&x, &gg)| gg / x).collect();
                    acc(&mut adj, *a, gi);
                }
                Op::Abs(a) => {
                    let gi = val(*a)
                        .iter()
                        .zip(&g)
                        .map(|(&x, &gg)| {
                            if x > 0.0 {
                                gg
                            } else if x < 0.0 {
                                -gg
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    acc(&mut adj, *a, gi);
                }
                Op::Add(a, b) => {
                    if needs(*a) {
                        acc(&mut adj, *a, g.clone());
                    }
                    if needs(*b) {
                        acc(&mut adj, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if needs(*a) {
                        acc(&mut adj, *a, g.clone());
                    }
                    if needs(*b) {
                        acc(&mut adj, *b, g.iter().map(|x| -x).collect());
                    }
                }
                Op::Mul(a, b) => {
                    if needs(*a) {
                        let gi = val(*b).iter().zip(&g).map(|(y, gg)| y * gg).collect();
                        acc(&mut adj, *a, gi);
                    }
                    if needs(*b) {
                        let gi = val(*a).iter().zip(&g).map(|(x, gg)| x * gg).collect();
                        acc(&mut adj, *b, gi);
                    }
                }
                Op::Scale(a, c) => {
                    acc(&mut adj, *a, g.iter().map(|x| x * c).collect());
                }
                Op::AddBias(x, b) => {
                    let d = self.shape(*x)[1];
                    if needs(*b) {
                        let mut gb = vec![0.0; d];
                        for row in g.chunks(d) {
                            for (o, v) in gb.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                        acc(&mut adj, *b, gb);
                    }
                    if needs(*x) {
                        acc(&mut adj, *x, g);
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = node.value.cols();
                    let n = node.value.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.shape(p)[1];
                        if needs(p) {
                            let mut gp = Vec::with_capacity(n * w);
                            for i in 0..n {
                                gp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                            }
                            acc(&mut adj, p, gp);
                        }
                        offset += w;
                    }
                }
                Op::SliceCols(x, start) => {
                    let (n, d) = (self.shape(*x)[0], self.shape(*x)[1]);
                    let w = node.value.cols();
                    let mut gx = vec![0.0; n * d];
                    for i in 0..n {
                        gx[i * d + start..i * d + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                    }
                    acc(&mut adj, *x, gx);
                }
                Op::NormalizeRows(x, norms) => {
                    let d = node.value.cols();
                    let mut gx = Vec::with_capacity(g.len());
                    for (i, &norm) in norms.iter().enumerate() {
                        let y = &out[i * d..(i + 1) * d];
                        let gy = &g[i * d..(i + 1) * d];
                        let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                        gx.extend(y.iter().zip(gy).map(|(&yy, &gg)| (gg - yy * dot) / norm));
                    }
                    acc(&mut adj, *x, gx);
                }
                Op::LogSoftmaxRows(x) => {
                    let d = node.value.cols();
                    let mut gx = Vec::with_capacity(g.len());
                    for (y, gy) in out.chunks(d).zip(g.chunks(d)) {
                        let total: f64 = gy.iter().sum();
                        gx.extend(y.iter().zip(gy).map(|(&yy, &gg)| gg - yy.exp() * total));
                    }
                    acc(&mut adj, *x, gx);
                }
                Op::Diagonal(x) => {
                    let n = node.value.rows();
                    let mut gx = vec![0.0; n * n];
                    for i in 0..n {
                        gx[i * n + i] = g[i];
                    }
                    acc(&mut adj, *x, gx);
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    acc(&mut adj, *x, vec![g[0]; n]);
                }
                Op::Mean(x) => {
                    let n = self.value(*x).len();
                    acc(&mut adj, *x, vec![g[0] / n as f64; n]);
                }
            }
        }

        for (idx, g) in leaf_grads {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("gradient".into()));
            }
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}
