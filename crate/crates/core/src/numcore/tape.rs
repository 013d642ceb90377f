//! Reverse-mode differentiation over rank-2 tensors.
//!
//! A [`Tape`] is an append-only list of nodes. Each primitive computes its
//! forward value eagerly and records its inputs; [`Tape::backward`] walks the
//! nodes in reverse creation order and accumulates adjoints additively.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::tensor::{gemm_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
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
    /// `a * b^T`
    MatMulT(Var, Var),
    /// Right operand may be a single row broadcast over the left's rows.
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Gather(Var, Vec<usize>),
    Dropout(Var, Vec<f64>),
    Sum(Var),
    Mean(Var),
    Pick(Var, Vec<(usize, usize)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::Domain {
                op: op_name(&op),
                msg: "non-finite result".into(),
            });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.nodes[v.0].value.dims2()
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf not tied to any stored parameter.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers the named parameter from `store` as a leaf. Repeated calls
    /// with the same name return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_index.get(name) {
            return Ok(v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))?
            .clone();
        let v = self.input(t);
        self.params.push((name.to_string(), v));
        self.param_index.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a)?;
        let (k2, n) = self.dims(b)?;
        if k != k2 {
            return Err(shape_err("matmul", self.value(a), self.value(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(
            &mut out,
            self.value(a).data(),
            (m, k),
            false,
            self.value(b).data(),
            (k, n),
            false,
        );
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg)
    }

    /// `a * b^T`, for weights stored as `(out, in)`.
    pub fn matmul_transposed(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a)?;
        let (n, k2) = self.dims(b)?;
        if k != k2 {
            return Err(shape_err("matmul_transposed", self.value(a), self.value(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(
            &mut out,
            self.value(a).data(),
            (m, k),
            false,
            self.value(b).data(),
            (n, k),
            true,
        );
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMulT(a, b), rg)
    }

    fn broadcast_binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (r, c) = ta.dims2()?;
        let (rb, cb) = tb.dims2()?;
        if (rb, cb) == (r, c) {
            Ok(ta.zip_map(tb, f))
        } else if rb == 1 && cb == c {
            let row = tb.data();
            let data = ta
                .data()
                .chunks(c)
                .flat_map(|chunk| chunk.iter().zip(row).map(|(&x, &y)| f(x, y)))
                .collect();
            Tensor::matrix(r, c, data)
        } else {
            Err(shape_err(name, ta, tb))
        }
    }

    /// Elementwise sum; `b` may also be a single row added to every row of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    /// Elementwise difference; `b` may be a single broadcast row.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_binary(a, b, "subtract", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(shape_err("elementwise_multiply", ta, tb));
        }
        let out = ta.zip_map(tb, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn concat_columns(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_columns of nothing".into()))?;
        let rows = self.dims(first)?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p)?;
            if r != rows {
                return Err(shape_err("concat_columns", self.value(first), self.value(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Tensor::matrix(rows, total, data)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
        let cols = self.dims(first)?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p)?;
            if c != cols {
                return Err(shape_err("concat_rows", self.value(first), self.value(p)));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Tensor::matrix(rows, cols, data)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        )
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if let Some(bad) = t.data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                msg: format!("non-positive input {bad}"),
            });
        }
        let out = t.map(f64::ln);
        let rg = self.rg(a);
        self.push(out, Op::Log(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(c) {
            softmax_in_place(row);
        }
        let rg = self.rg(a);
        self.push(Tensor::matrix(r, c, data)?, Op::SoftmaxRows(a), rg)
    }

    /// Row-wise `log(softmax(x))`, computed without forming the probabilities.
    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(c) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let rg = self.rg(a);
        self.push(Tensor::matrix(r, c, data)?, Op::LogSoftmaxRows(a), rg)
    }

    /// Gathers rows of `table` by index. Serves both embedding lookup and
    /// row selection of intermediate matrices.
    pub fn embedding_lookup(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (rows, cols) = self.dims(table)?;
        if indices.is_empty() {
            return Err(Error::Contract("embedding_lookup with no indices".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Contract(format!(
                "row index {bad} out of range for {rows} rows"
            )));
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(t.row(i));
        }
        let rg = self.rg(table);
        self.push(
            Tensor::matrix(indices.len(), cols, data)?,
            Op::Gather(table, indices.to_vec()),
            rg,
        )
    }

    /// Inverted dropout: surviving entries are scaled by `1 / (1 - rate)`.
    pub fn dropout(&mut self, a: Var, rate: f64, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Argument(format!("dropout rate {rate} not in [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<f64> = (0..self.value(a).numel())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let t = self.value(a);
        let mut out = t.clone();
        out.data_mut()
            .iter_mut()
            .zip(&mask)
            .for_each(|(x, m)| *x *= m);
        let rg = self.rg(a);
        self.push(out, Op::Dropout(a, mask), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Selects the listed `(row, col)` entries into a `1 x len` row.
    pub fn pick(&mut self, a: Var, entries: &[(usize, usize)]) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        if entries.is_empty() {
            return Err(Error::Contract("pick of no entries".into()));
        }
        if let Some(&(i, j)) = entries.iter().find(|&&(i, j)| i >= r || j >= c) {
            return Err(Error::Contract(format!(
                "pick ({i}, {j}) outside {r}x{c} tensor"
            )));
        }
        let t = self.value(a);
        let data = entries.iter().map(|&(i, j)| t.get(i, j)).collect();
        let rg = self.rg(a);
        self.push(
            Tensor::matrix(1, entries.len(), data)?,
            Op::Pick(a, entries.to_vec()),
            rg,
        )
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(lt.map(|_| 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Reduces a full-shape adjoint onto a broadcast row operand.
    fn unbroadcast(&self, target: Var, g: &Tensor) -> Tensor {
        let tv = self.value(target);
        if tv.same_shape(g) {
            return g.clone();
        }
        let c = tv.cols();
        let mut out = vec![0.0; c];
        for row in g.data().chunks(c) {
            out.iter_mut().zip(row).for_each(|(o, x)| *o += x);
        }
        Tensor::matrix(1, c, out).expect("broadcast row")
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.rows(), ta.cols());
                let n = tb.cols();
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_acc(&mut da, g.data(), (m, n), false, tb.data(), (k, n), true);
                    self.accumulate(grads, *a, Tensor::matrix(m, k, da).expect("shape"));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_acc(&mut db, ta.data(), (m, k), true, g.data(), (m, n), false);
                    self.accumulate(grads, *b, Tensor::matrix(k, n, db).expect("shape"));
                }
            }
            Op::MatMulT(a, b) => {
                // y = a b^T: da = g b, db = g^T a
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.rows(), ta.cols());
                let n = tb.rows();
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_acc(&mut da, g.data(), (m, n), false, tb.data(), (n, k), false);
                    self.accumulate(grads, *a, Tensor::matrix(m, k, da).expect("shape"));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; n * k];
                    gemm_acc(&mut db, g.data(), (m, n), true, ta.data(), (m, k), false);
                    self.accumulate(grads, *b, Tensor::matrix(n, k, db).expect("shape"));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*b) {
                    let gb = self.unbroadcast(*b, g);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*b) {
                    let gb = self.unbroadcast(*b, g).map(|x| -x);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|x| x * s)),
            Op::ConcatCols(parts) => {
                let rows = y.rows();
                let total = y.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            let base = r * total + offset;
                            d.extend_from_slice(&g.data()[base..base + w]);
                        }
                        self.accumulate(grads, p, Tensor::matrix(rows, w, d).expect("shape"));
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let cols = y.cols();
                let mut offset = 0;
                for &p in parts {
                    let r = self.value(p).rows();
                    if self.rg(p) {
                        let d = g.data()[offset * cols..(offset + r) * cols].to_vec();
                        self.accumulate(grads, p, Tensor::matrix(r, cols, d).expect("shape"));
                    }
                    offset += r;
                }
            }
            Op::Tanh(a) => self.accumulate(grads, *a, g.zip_map(y, |d, t| d * (1.0 - t * t))),
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, g.zip_map(y, |d, s| d * s * (1.0 - s)))
            }
            Op::Log(a) => self.accumulate(grads, *a, g.zip_map(self.value(*a), |d, x| d / x)),
            Op::SoftmaxRows(a) => {
                let c = y.cols();
                let mut d = g.clone();
                for (drow, yrow) in d.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                    let dot: f64 = drow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    drow.iter_mut()
                        .zip(yrow)
                        .for_each(|(dv, yv)| *dv = yv * (*dv - dot));
                }
                self.accumulate(grads, *a, d);
            }
            Op::LogSoftmaxRows(a) => {
                let c = y.cols();
                let mut d = g.clone();
                for (drow, yrow) in d.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                    let total: f64 = drow.iter().sum();
                    drow.iter_mut()
                        .zip(yrow)
                        .for_each(|(dv, ly)| *dv -= ly.exp() * total);
                }
                self.accumulate(grads, *a, d);
            }
            Op::Gather(table, indices) => {
                let tv = self.value(*table);
                let c = tv.cols();
                let mut d = tv.zeros_like();
                for (k, &i) in indices.iter().enumerate() {
                    let src = &g.data()[k * c..(k + 1) * c];
                    d.data_mut()[i * c..(i + 1) * c]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(o, s)| *o += s);
                }
                self.accumulate(grads, *table, d);
            }
            Op::Dropout(a, mask) => {
                let mut d = g.clone();
                d.data_mut().iter_mut().zip(mask).for_each(|(x, m)| *x *= m);
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let s = g.item();
                let d = self.value(*a).map(|_| s);
                self.accumulate(grads, *a, d);
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                let s = g.item() / t.numel() as f64;
                self.accumulate(grads, *a, t.map(|_| s));
            }
            Op::Pick(a, entries) => {
                let t = self.value(*a);
                let c = t.cols();
                let mut d = t.zeros_like();
                for (k, &(i, j)) in entries.iter().enumerate() {
                    d.data_mut()[i * c + j] += g.data()[k];
                }
                self.accumulate(grads, *a, d);
            }
        }
    }

    /// Gradients of every registered parameter, in registration order.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|(name, v)| {
                let g = grads
                    .get(*v)
                    .cloned()
                    .unwrap_or_else(|| self.value(*v).zeros_like());
                (name.clone(), g)
            })
            .collect()
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::MatMulT(..) => "matmul_transposed",
        Op::Add(..) => "add",
        Op::Sub(..) => "subtract",
        Op::Mul(..) => "elementwise_multiply",
        Op::Scale(..) => "scale",
        Op::ConcatCols(_) => "concat_columns",
        Op::ConcatRows(_) => "concat_rows",
        Op::Tanh(_) => "tanh",
        Op::Sigmoid(_) => "sigmoid",
        Op::Log(_) => "log",
        Op::SoftmaxRows(_) => "softmax_rows",
        Op::LogSoftmaxRows(_) => "log_softmax_rows",
        Op::Gather(..) => "embedding_lookup",
        Op::Dropout(..) => "dropout",
        Op::Sum(_) => "sum",
        Op::Mean(_) => "mean",
        Op::Pick(..) => "pick",
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}
