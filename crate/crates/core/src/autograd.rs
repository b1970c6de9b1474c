//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records every operation of one forward pass; [`Graph::backward`]
//! walks it in reverse and returns gradients for the parameters that were
//! pulled into the graph. Parameters never touched get no entry, so their
//! gradient is exactly zero.

use crate::error::{Error, Result};
use crate::tensor::{dot, matmul_acc, Matrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::rc::Rc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulT(Var, Var),
    Add(Var, Var),
    /// `a + 1 x cols` row broadcast
    AddRow(Var, Var),
    /// Adds a constant; `-inf` entries mask logits.
    AddConst(Var),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Cols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Dropout {
        x: Var,
        keep: Vec<f64>,
    },
    CrossEntropySum {
        logits: Var,
        targets: Vec<usize>,
        probs: Matrix,
    },
    AttnReg {
        x: Var,
        target: Rc<Matrix>,
        weights: Rc<Matrix>,
        squared: bool,
    },
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Matrix,
    op: Op,
}

pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
    dropout: Option<(f64, ChaCha8Rng)>,
}

/// Parameter gradients keyed by parameter index.
pub type ParamGrads = HashMap<usize, Matrix>;

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: HashMap::new(), dropout: None }
    }

    /// Enables inverted dropout with probability `rate`.
    pub fn with_dropout(rate: f64, rng: ChaCha8Rng) -> Self {
        let mut g = Self::new();
        if rate > 0.0 {
            g.dropout = Some((rate, rng));
        }
        g
    }

    /// Hands the dropout RNG back so a training loop can keep its stream.
    pub fn take_rng(self) -> Option<ChaCha8Rng> {
        self.dropout.map(|(_, r)| r)
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    pub fn input(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf)
    }

    /// Leaf for parameter `index`; repeated calls return the same node.
    pub fn param(&mut self, index: usize, value: &Matrix) -> Var {
        if let Some(&v) = self.params.get(&index) {
            return v;
        }
        let v = self.push(value.clone(), Op::Param(index));
        self.params.insert(index, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_t(self.value(b));
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "add shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        let out = Matrix::from_vec(x.rows, x.cols, data);
        self.push(out, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (x, b) = (self.value(a), self.value(bias));
        assert_eq!((1, x.cols), b.shape(), "bias shape mismatch");
        let mut out = x.clone();
        for r in 0..out.rows {
            for (o, bv) in out.row_mut(r).iter_mut().zip(&b.data) {
                *o += bv;
            }
        }
        self.push(out, Op::AddRow(a, bias))
    }

    pub fn add_const(&mut self, a: Var, c: &Matrix) -> Var {
        let x = self.value(a);
        assert_eq!(x.shape(), c.shape(), "add_const shape mismatch");
        let data = x.data.iter().zip(&c.data).map(|(p, q)| p + q).collect();
        let out = Matrix::from_vec(x.rows, x.cols, data);
        self.push(out, Op::AddConst(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let x = self.value(a);
        let out = Matrix::from_vec(x.rows, x.cols, x.data.iter().map(|v| v * s).collect());
        self.push(out, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = Matrix::from_vec(x.rows, x.cols, x.data.iter().map(|v| v.max(0.0)).collect());
        self.push(out, Op::Relu(a))
    }

    /// Row softmax; `-inf` logits get probability exactly 0. A row with no
    /// finite logit is an error.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut out = Matrix::zeros(x.rows, x.cols);
        for r in 0..x.rows {
            softmax_into(x.row(r), out.row_mut(r)).ok_or(Error::DegenerateRow { row: r })?;
        }
        Ok(self.push(out, Op::SoftmaxRows(a)))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let n = xv.cols as f64;
        let mut xhat = Matrix::zeros(xv.rows, xv.cols);
        let mut out = Matrix::zeros(xv.rows, xv.cols);
        let mut inv_std = Vec::with_capacity(xv.rows);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for c in 0..xv.cols {
                let h = (row[c] - mean) * is;
                xhat[(r, c)] = h;
                out[(r, c)] = h * g.data[c] + b.data[c];
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Matrix::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(out, Op::Gather { table, ids: ids.to_vec() })
    }

    pub fn cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let out = xv.block(0, xv.rows, start, len);
        self.push(out, Op::Cols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut c0 = 0;
        for &p in parts {
            let pv = self.value(p);
            for r in 0..rows {
                out.row_mut(r)[c0..c0 + pv.cols].copy_from_slice(pv.row(r));
            }
            c0 += pv.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Inverted dropout; identity when the graph was built without dropout.
    pub fn dropout(&mut self, x: Var) -> Var {
        let Some((rate, rng)) = self.dropout.as_mut() else {
            return x;
        };
        let rate = *rate;
        let n = self.nodes[x.0].value.data.len();
        let keep: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { 1.0 / (1.0 - rate) }).collect();
        let xv = self.value(x);
        let data = xv.data.iter().zip(&keep).map(|(v, k)| v * k).collect();
        let out = Matrix::from_vec(xv.rows, xv.cols, data);
        self.push(out, Op::Dropout { x, keep })
    }

    /// Summed negative log-likelihood of `targets` under row-softmax(logits); 1x1.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        assert_eq!(lv.rows, targets.len(), "one target per logit row");
        let mut probs = Matrix::zeros(lv.rows, lv.cols);
        let mut nll = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            softmax_into(lv.row(r), probs.row_mut(r)).ok_or(Error::DegenerateRow { row: r })?;
            nll -= log_softmax_at(lv.row(r), t);
        }
        Ok(self
            .push(Matrix::from_vec(1, 1, vec![nll]), Op::CrossEntropySum { logits, targets: targets.to_vec(), probs }))
    }

    /// `sum_ij w_ij * |x_ij - t_ij|` (or squared difference); 1x1.
    pub fn attention_regularizer(&mut self, x: Var, target: Rc<Matrix>, weights: Rc<Matrix>, squared: bool) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape(), target.shape());
        assert_eq!(xv.shape(), weights.shape());
        let mut total = 0.0;
        for i in 0..xv.data.len() {
            let d = xv.data[i] - target.data[i];
            total += weights.data[i] * if squared { d * d } else { d.abs() };
        }
        self.push(Matrix::from_vec(1, 1, vec![total]), Op::AttnReg { x, target, weights, squared })
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let first = self.value(terms[0].0);
        let mut out = Matrix::zeros(first.rows, first.cols);
        for &(v, w) in terms {
            let tv = self.value(v);
            assert_eq!(tv.shape(), out.shape(), "weighted_sum shape mismatch");
            for (o, x) in out.data.iter_mut().zip(&tv.data) {
                *o += w * x;
            }
        }
        self.push(out, Op::WeightedSum(terms.to_vec()))
    }

    /// Gradients of the 1x1 node `loss` with respect to every parameter leaf.
    pub fn backward(&self, loss: Var) -> ParamGrads {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut out = ParamGrads::new();

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut acc = |v: Var, g: Matrix| accumulate(&mut grads, v, g);
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => {
                    out.insert(*p, dy);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(*a, dy.matmul_t(bv));
                    let mut db = Matrix::zeros(bv.rows, bv.cols);
                    matmul_acc(&av.transpose().data, &dy.data, &mut db.data, av.cols, av.rows, dy.cols);
                    acc(*b, db);
                }
                Op::MatMulT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(*a, dy.matmul(bv));
                    acc(*b, dy.transpose().matmul(av));
                }
                Op::Add(a, b) => {
                    acc(*a, dy.clone());
                    acc(*b, dy);
                }
                Op::AddRow(a, bias) => {
                    let mut db = Matrix::zeros(1, dy.cols);
                    for r in 0..dy.rows {
                        for (d, g) in db.data.iter_mut().zip(dy.row(r)) {
                            *d += g;
                        }
                    }
                    acc(*bias, db);
                    acc(*a, dy);
                }
                Op::AddConst(a) => acc(*a, dy),
                Op::Scale(a, s) => {
                    let data = dy.data.iter().map(|v| v * s).collect();
                    acc(*a, Matrix::from_vec(dy.rows, dy.cols, data));
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let data = dy.data.iter().zip(&x.data).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect();
                    acc(*a, Matrix::from_vec(dy.rows, dy.cols, data));
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut dx = Matrix::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let (yr, gr) = (y.row(r), dy.row(r));
                        let inner = dot(yr, gr);
                        for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                            *d = yr[c] * (gr[c] - inner);
                        }
                    }
                    acc(*a, dx);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let g = self.value(*gamma);
                    let n = xhat.cols as f64;
                    let mut dgamma = Matrix::zeros(1, xhat.cols);
                    let mut dbeta = Matrix::zeros(1, xhat.cols);
                    let mut dx = Matrix::zeros(xhat.rows, xhat.cols);
                    for r in 0..xhat.rows {
                        let (h, gr) = (xhat.row(r), dy.row(r));
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for c in 0..xhat.cols {
                            dgamma.data[c] += gr[c] * h[c];
                            dbeta.data[c] += gr[c];
                            let dh = gr[c] * g.data[c];
                            sum_dh += dh;
                            sum_dh_h += dh * h[c];
                        }
                        let is = inv_std[r];
                        for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                            let dh = gr[c] * g.data[c];
                            *d = is / n * (n * dh - sum_dh - h[c] * sum_dh_h);
                        }
                    }
                    acc(*gamma, dgamma);
                    acc(*beta, dbeta);
                    acc(*x, dx);
                }
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let mut dt = Matrix::zeros(t.rows, t.cols);
                    for (r, &id) in ids.iter().enumerate() {
                        for (d, g) in dt.row_mut(id).iter_mut().zip(dy.row(r)) {
                            *d += g;
                        }
                    }
                    acc(*table, dt);
                }
                Op::Cols { x, start } => {
                    let xv = self.value(*x);
                    let mut dx = Matrix::zeros(xv.rows, xv.cols);
                    for r in 0..xv.rows {
                        dx.row_mut(r)[*start..*start + dy.cols].copy_from_slice(dy.row(r));
                    }
                    acc(*x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        acc(p, dy.block(0, dy.rows, c0, w));
                        c0 += w;
                    }
                }
                Op::Dropout { x, keep } => {
                    let data = dy.data.iter().zip(keep).map(|(g, k)| g * k).collect();
                    acc(*x, Matrix::from_vec(dy.rows, dy.cols, data));
                }
                Op::CrossEntropySum { logits, targets, probs } => {
                    let s = dy.data[0];
                    let mut dl = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        dl[(r, t)] -= 1.0;
                    }
                    dl.data.iter_mut().for_each(|v| *v *= s);
                    acc(*logits, dl);
                }
                Op::AttnReg { x, target, weights, squared } => {
                    let s = dy.data[0];
                    let xv = self.value(*x);
                    let data = (0..xv.data.len())
                        .map(|i| {
                            let d = xv.data[i] - target.data[i];
                            let local = if *squared { 2.0 * d } else { sign(d) };
                            s * weights.data[i] * local
                        })
                        .collect();
                    acc(*x, Matrix::from_vec(xv.rows, xv.cols, data));
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        let data = dy.data.iter().map(|g| g * w).collect();
                        acc(v, Matrix::from_vec(dy.rows, dy.cols, data));
                    }
                }
            }
        }
        out
    }
}

fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data.iter_mut().zip(&g.data) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Writes softmax of `logits` into `out`; `None` if no logit is finite.
pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) -> Option<()> {
    let max = logits.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = if l == f64::NEG_INFINITY { 0.0 } else { (l - max).exp() };
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    Some(())
}

pub(crate) fn log_softmax_at(logits: &[f64], index: usize) -> f64 {
    let max = logits.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().filter(|v| v.is_finite()).map(|v| (v - max).exp()).sum::<f64>().ln();
    logits[index] - lse
}
