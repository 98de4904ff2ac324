//! Reverse-mode differentiation tape.
//!
//! Every op appends a node holding its forward value plus whatever it needs
//! for the backward pass. `backward` walks the tape in reverse once.

use rand::Rng;

use super::gemm::{gemm, MatRef};
use super::tensor::Tensor;
use crate::error::{dim_err, Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    AddRow {
        x: Var,
        bias: Var,
    },
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        seq_len: usize,
        heads: usize,
        key_mask: Vec<bool>,
        probs: Vec<f64>,
    },
    L2NormRows {
        x: Var,
        norms: Vec<f64>,
    },
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    SoftCrossEntropy {
        logits: Var,
        targets: Vec<f64>,
        probs: Vec<f64>,
    },
    DualInfoNce {
        anchors: Var,
        pos1: Var,
        pos2: Var,
        tau: f64,
    },
    Sum(Var),
    Mean(Var),
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Tape of differentiable computations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: true,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds a non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: false,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last `backward`, if the node received one.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn shape2(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    // ---------------------------------------------------------------- ops

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape2(a);
        let bt = self.value(b);
        if bt.shape().len() != 2 || bt.shape()[0] != k {
            return Err(dim_err!(
                "matmul: lhs is {m}x{k}, rhs has shape {:?}",
                bt.shape()
            ));
        }
        let n = bt.shape()[1];
        let mut out = vec![0.0; m * n];
        gemm(
            MatRef::new(self.value(a).data(), m, k),
            MatRef::new(bt.data(), k, n),
            &mut out,
            false,
        );
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(
            value,
            Op::MatMul {
                a,
                b,
                trans_b: false,
            },
            &[a, b],
        ))
    }

    /// `a[m×k] · b[n×k]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape2(a);
        let (n, k2) = self.shape2(b);
        if k != k2 {
            return Err(dim_err!("matmul_nt: lhs is {m}x{k}, rhs is {n}x{k2}"));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            MatRef::new(self.value(a).data(), m, k),
            MatRef::new(self.value(b).data(), n, k).t(),
            &mut out,
            false,
        );
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul { a, b, trans_b: true }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err!("add: {:?} vs {:?}", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err!("mul: {:?} vs {:?}", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a length-`d` vector to every row of `x[…×d]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).cols();
        if self.value(bias).numel() != d {
            return Err(dim_err!(
                "add_row: rows have {d} columns, bias has {}",
                self.value(bias).numel()
            ));
        }
        let mut value = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for chunk in value.data_mut().chunks_mut(d) {
            for (v, bi) in chunk.iter_mut().zip(&b) {
                *v += bi;
            }
        }
        Ok(self.push(value, Op::AddRow { x, bias }, &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().for_each(|v| *v *= factor);
        self.push(value, Op::Scale(x, factor), &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
        self.push(value, Op::Gelu(x), &[x])
    }

    /// Normalizes each vector along the last dimension, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).cols();
        if self.value(gain).numel() != d || self.value(bias).numel() != d {
            return Err(dim_err!("layer_norm: last dimension {d} vs gain/bias"));
        }
        let xt = self.value(x);
        let rows = xt.rows();
        let mut xhat = vec![0.0; xt.numel()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = xt.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for (o, v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * rs;
            }
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut out = xhat.clone();
        for chunk in out.chunks_mut(d) {
            for j in 0..d {
                chunk[j] = chunk[j] * g[j] + b[j];
            }
        }
        let value = Tensor::new(xt.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    /// Inverted dropout; identity when `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let n = self.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mut value = self.value(x).clone();
        for (v, m) in value.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        self.push(value, Op::Dropout { x, mask }, &[x])
    }

    /// Row lookup `table[ids[i], :]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (v, d) = (t.rows(), t.cols());
        if ids.is_empty() {
            return Err(dim_err!("gather: no ids"));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index(format!("gather: id {id} >= table rows {v}")));
            }
            out.extend_from_slice(t.row(id));
        }
        let value = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Picks rows of a `[n×d]` activation.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let n = t.rows();
        if rows.is_empty() {
            return Err(Error::Index("select_rows: no rows selected".into()));
        }
        let mut out = Vec::with_capacity(rows.len() * t.cols());
        for &r in rows {
            if r >= n {
                return Err(Error::Index(format!("select_rows: row {r} >= {n}")));
            }
            out.extend_from_slice(t.row(r));
        }
        let value = Tensor::new(vec![rows.len(), t.cols()], out)?;
        Ok(self.push(
            value,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
            &[x],
        ))
    }

    /// Multi-head scaled dot-product self-attention over packed sequences.
    ///
    /// `q`, `k`, `v` are `[S·T × d]` with `T = seq_len`; `key_mask[s·T + t]`
    /// marks real tokens. Padded positions neither attend nor are attended
    /// to; their output rows are zero.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        seq_len: usize,
        heads: usize,
        key_mask: &[bool],
    ) -> Result<Var> {
        let (n, d) = self.shape2(q);
        if self.shape2(k) != (n, d) || self.shape2(v) != (n, d) {
            return Err(dim_err!("attention: q/k/v shapes differ"));
        }
        if heads == 0 || d % heads != 0 {
            return Err(dim_err!("attention: d={d} not divisible by heads={heads}"));
        }
        if seq_len == 0 || n % seq_len != 0 || key_mask.len() != n {
            return Err(dim_err!(
                "attention: {n} rows, seq_len {seq_len}, mask {}",
                key_mask.len()
            ));
        }
        let seqs = n / seq_len;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let t = seq_len;
        let mut probs = vec![0.0; seqs * heads * t * t];
        let mut out = vec![0.0; n * d];
        let mut scores = vec![0.0; t];
        for s in 0..seqs {
            let base = s * t;
            for h in 0..heads {
                let off = h * dh;
                for i in 0..t {
                    if !key_mask[base + i] {
                        continue;
                    }
                    let qi = &qd[(base + i) * d + off..(base + i) * d + off + dh];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..t {
                        if key_mask[base + j] {
                            let kj = &kd[(base + j) * d + off..(base + j) * d + off + dh];
                            scores[j] = dot(qi, kj) * scale;
                            max = max.max(scores[j]);
                        }
                    }
                    let mut sum = 0.0;
                    for j in 0..t {
                        if key_mask[base + j] {
                            scores[j] = (scores[j] - max).exp();
                            sum += scores[j];
                        }
                    }
                    let prow = &mut probs[((s * heads + h) * t + i) * t..][..t];
                    let orow = &mut out[(base + i) * d + off..(base + i) * d + off + dh];
                    for j in 0..t {
                        if key_mask[base + j] {
                            let p = scores[j] / sum;
                            prow[j] = p;
                            let vj = &vd[(base + j) * d + off..(base + j) * d + off + dh];
                            axpy(p, vj, orow);
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, d], out)?;
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                seq_len,
                heads,
                key_mask: key_mask.to_vec(),
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Scales every row to unit L2 norm. Zero rows are a numeric error.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let mut value = t.clone();
        let mut norms = Vec::with_capacity(t.rows());
        for r in 0..t.rows() {
            let row = value.row_mut(r);
            let norm = dot(row, row).sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::Numeric(format!(
                    "cannot normalize row {r} with norm {norm}"
                )));
            }
            row.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        Ok(self.push(value, Op::L2NormRows { x, norms }, &[x]))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        let d = value.cols();
        for chunk in value.data_mut().chunks_mut(d) {
            softmax_in_place(chunk);
        }
        self.push(value, Op::SoftmaxRows(x), &[x])
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        let d = value.cols();
        for chunk in value.data_mut().chunks_mut(d) {
            let lse = log_sum_exp(chunk.iter().copied());
            chunk.iter_mut().for_each(|v| *v -= lse);
        }
        self.push(value, Op::LogSoftmaxRows(x), &[x])
    }

    /// Mean negative log-likelihood of integer targets under row-wise softmax.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, v) = self.shape2(logits);
        if targets.len() != n {
            return Err(dim_err!(
                "cross_entropy: {n} logit rows but {} targets",
                targets.len()
            ));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= v {
                return Err(Error::Index(format!(
                    "cross_entropy: target {t} >= classes {v}"
                )));
            }
            let row = &mut probs[r * v..(r + 1) * v];
            let lse = log_sum_exp(row.iter().copied());
            loss += lse - row[t];
            softmax_in_place(row);
        }
        let value = Tensor::scalar(loss / n as f64);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Mean over rows of `-Σ_j target[r,j] · log softmax(logits)[r,j]`.
    /// Targets are treated as constants.
    pub fn soft_cross_entropy(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        let (n, v) = self.shape2(logits);
        if targets.numel() != n * v {
            return Err(dim_err!(
                "soft_cross_entropy: logits {n}x{v}, targets {:?}",
                targets.shape()
            ));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for r in 0..n {
            let row = &mut probs[r * v..(r + 1) * v];
            let lse = log_sum_exp(row.iter().copied());
            let q = targets.row(r);
            loss -= row.iter().zip(q).map(|(l, qj)| qj * (l - lse)).sum::<f64>();
            softmax_in_place(row);
        }
        let value = Tensor::scalar(loss / n as f64);
        Ok(self.push(
            value,
            Op::SoftCrossEntropy {
                logits,
                targets: targets.data().to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Dual-positive InfoNCE on already-normalized `[B×d]` inputs.
    ///
    /// For each anchor `i` and each positive `α ∈ {pos1_i, pos2_i}`:
    /// `-log g(a_i, α) / (g(a_i, α) + Σ_{k≠i} g(a_i, a_k))` with
    /// `g(x, y) = exp(xᵀy / τ)`. Returns the mean over anchors of the
    /// two-term sum.
    pub fn dual_info_nce(&mut self, anchors: Var, pos1: Var, pos2: Var, tau: f64) -> Result<Var> {
        let (b, d) = self.shape2(anchors);
        if self.shape2(pos1) != (b, d) || self.shape2(pos2) != (b, d) {
            return Err(dim_err!("dual_info_nce: anchor/positive shapes differ"));
        }
        if !(tau > 0.0) {
            return Err(Error::Input(format!("temperature must be > 0, got {tau}")));
        }
        let a = self.value(anchors);
        let mut total = 0.0;
        for i in 0..b {
            let ai = a.row(i);
            let negs: Vec<f64> = (0..b)
                .filter(|&k| k != i)
                .map(|k| dot(ai, a.row(k)) / tau)
                .collect();
            for p in [pos1, pos2] {
                let s_pos = dot(ai, self.value(p).row(i)) / tau;
                let lse = log_sum_exp(std::iter::once(s_pos).chain(negs.iter().copied()));
                total += lse - s_pos;
            }
        }
        let value = Tensor::scalar(total / b as f64);
        Ok(self.push(
            value,
            Op::DualInfoNce {
                anchors,
                pos1,
                pos2,
                tau,
            },
            &[anchors, pos1, pos2],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    /// `Σ w_i · x_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut s = 0.0;
        for &(v, w) in terms {
            if self.value(v).numel() != 1 {
                return Err(dim_err!("weighted_sum: term is not a scalar"));
            }
            s += w * self.value(v).item();
        }
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum(terms.to_vec()), &inputs))
    }

    // ----------------------------------------------------------- backward

    fn accumulate(&mut self, v: Var, g: Vec<f64>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(existing) => axpy(1.0, &g, existing),
            None => node.grad = Some(g),
        }
    }

    /// Back-propagates from the scalar `loss`, filling `grad` on every node
    /// that requires one. Clears gradients from any earlier call.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(dim_err!("backward: loss must be a scalar"));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(grad) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(i, &grad);
            self.nodes[i].grad = Some(grad);
            for (v, g) in contributions {
                self.accumulate(v, g);
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn local_grads(&self, i: usize, gy: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = self.shape2(*a);
                let n = node.value.cols();
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                let gyr = MatRef::new(gy, m, n);
                if self.needs(*a) {
                    let mut ga = vec![0.0; m * k];
                    let bref = if *trans_b {
                        MatRef::new(bd, n, k)
                    } else {
                        MatRef::new(bd, k, n).t()
                    };
                    gemm(gyr, bref, &mut ga, false);
                    out.push((*a, ga));
                }
                if self.needs(*b) {
                    let mut gb = vec![0.0; k * n];
                    if *trans_b {
                        gemm(gyr.t(), MatRef::new(ad, m, k), &mut gb, false);
                    } else {
                        gemm(MatRef::new(ad, m, k).t(), gyr, &mut gb, false);
                    }
                    out.push((*b, gb));
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    out.push((*a, gy.to_vec()));
                }
                if self.needs(*b) {
                    out.push((*b, gy.to_vec()));
                }
            }
            Op::AddRow { x, bias } => {
                if self.needs(*x) {
                    out.push((*x, gy.to_vec()));
                }
                if self.needs(*bias) {
                    let d = node.value.cols();
                    let mut gb = vec![0.0; d];
                    for chunk in gy.chunks(d) {
                        axpy(1.0, chunk, &mut gb);
                    }
                    out.push((*bias, gb));
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    out.push((*a, gy.iter().zip(bd).map(|(g, y)| g * y).collect()));
                }
                if self.needs(*b) {
                    out.push((*b, gy.iter().zip(ad).map(|(g, x)| g * x).collect()));
                }
            }
            Op::Scale(x, f) => {
                out.push((*x, gy.iter().map(|g| g * f).collect()));
            }
            Op::Gelu(x) => {
                let xd = self.value(*x).data();
                out.push((*x, gy.iter().zip(xd).map(|(g, v)| g * gelu_grad(*v)).collect()));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = node.value.cols();
                let g = self.value(*gain).data();
                if self.needs(*gain) {
                    let mut gg = vec![0.0; d];
                    for (gr, xr) in gy.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += gr[j] * xr[j];
                        }
                    }
                    out.push((*gain, gg));
                }
                if self.needs(*bias) {
                    let mut gb = vec![0.0; d];
                    for gr in gy.chunks(d) {
                        axpy(1.0, gr, &mut gb);
                    }
                    out.push((*bias, gb));
                }
                if self.needs(*x) {
                    let mut gx = vec![0.0; gy.len()];
                    let mut dxhat = vec![0.0; d];
                    for r in 0..rstd.len() {
                        let gr = &gy[r * d..(r + 1) * d];
                        let xr = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            dxhat[j] = gr[j] * g[j];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dx = dot(&dxhat, xr) / d as f64;
                        for j in 0..d {
                            gx[r * d + j] = rstd[r] * (dxhat[j] - mean_d - xr[j] * mean_dx);
                        }
                    }
                    out.push((*x, gx));
                }
            }
            Op::Dropout { x, mask } => {
                out.push((*x, gy.iter().zip(mask).map(|(g, m)| g * m).collect()));
            }
            Op::Gather { table, ids } => {
                if self.needs(*table) {
                    let t = self.value(*table);
                    let d = t.cols();
                    let mut gt = vec![0.0; t.numel()];
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(1.0, &gy[r * d..(r + 1) * d], &mut gt[id * d..(id + 1) * d]);
                    }
                    out.push((*table, gt));
                }
            }
            Op::SelectRows { x, rows } => {
                let t = self.value(*x);
                let d = t.cols();
                let mut gx = vec![0.0; t.numel()];
                for (r, &src) in rows.iter().enumerate() {
                    axpy(1.0, &gy[r * d..(r + 1) * d], &mut gx[src * d..(src + 1) * d]);
                }
                out.push((*x, gx));
            }
            Op::Attention {
                q,
                k,
                v,
                seq_len,
                heads,
                key_mask,
                probs,
            } => {
                let (n, d) = self.shape2(*q);
                let t = *seq_len;
                let heads = *heads;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qd, kd, vd) = (
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                );
                let mut gq = vec![0.0; n * d];
                let mut gk = vec![0.0; n * d];
                let mut gv = vec![0.0; n * d];
                let mut dp = vec![0.0; t];
                for s in 0..n / t {
                    let base = s * t;
                    for h in 0..heads {
                        let off = h * dh;
                        for i in 0..t {
                            if !key_mask[base + i] {
                                continue;
                            }
                            let prow = &probs[((s * heads + h) * t + i) * t..][..t];
                            let goi = &gy[(base + i) * d + off..(base + i) * d + off + dh];
                            let mut weighted = 0.0;
                            for j in 0..t {
                                if key_mask[base + j] {
                                    let r = (base + j) * d + off;
                                    axpy(prow[j], goi, &mut gv[r..r + dh]);
                                    dp[j] = dot(goi, &vd[r..r + dh]);
                                    weighted += prow[j] * dp[j];
                                }
                            }
                            let qi_r = (base + i) * d + off;
                            for j in 0..t {
                                if key_mask[base + j] {
                                    let ds = prow[j] * (dp[j] - weighted) * scale;
                                    let r = (base + j) * d + off;
                                    axpy(ds, &kd[r..r + dh], &mut gq[qi_r..qi_r + dh]);
                                    axpy(ds, &qd[qi_r..qi_r + dh], &mut gk[r..r + dh]);
                                }
                            }
                        }
                    }
                }
                out.push((*q, gq));
                out.push((*k, gk));
                out.push((*v, gv));
            }
            Op::L2NormRows { x, norms } => {
                let y = &node.value;
                let d = y.cols();
                let mut gx = vec![0.0; y.numel()];
                for (r, norm) in norms.iter().enumerate() {
                    let yr = y.row(r);
                    let gr = &gy[r * d..(r + 1) * d];
                    let proj = dot(yr, gr);
                    for j in 0..d {
                        gx[r * d + j] = (gr[j] - yr[j] * proj) / norm;
                    }
                }
                out.push((*x, gx));
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let d = y.cols();
                let mut gx = vec![0.0; y.numel()];
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &gy[r * d..(r + 1) * d];
                    let s = dot(yr, gr);
                    for j in 0..d {
                        gx[r * d + j] = yr[j] * (gr[j] - s);
                    }
                }
                out.push((*x, gx));
            }
            Op::LogSoftmaxRows(x) => {
                let y = &node.value;
                let d = y.cols();
                let mut gx = vec![0.0; y.numel()];
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &gy[r * d..(r + 1) * d];
                    let s: f64 = gr.iter().sum();
                    for j in 0..d {
                        gx[r * d + j] = gr[j] - yr[j].exp() * s;
                    }
                }
                out.push((*x, gx));
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let n = targets.len();
                let v = probs.len() / n;
                let scale = gy[0] / n as f64;
                let mut gl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    gl[r * v + t] -= scale;
                }
                out.push((*logits, gl));
            }
            Op::SoftCrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let (n, v) = self.shape2(*logits);
                let scale = gy[0] / n as f64;
                let mut gl = vec![0.0; n * v];
                for r in 0..n {
                    let q = &targets[r * v..(r + 1) * v];
                    let qsum: f64 = q.iter().sum();
                    for j in 0..v {
                        gl[r * v + j] = scale * (probs[r * v + j] * qsum - q[j]);
                    }
                }
                out.push((*logits, gl));
            }
            Op::DualInfoNce {
                anchors,
                pos1,
                pos2,
                tau,
            } => {
                let (b, d) = self.shape2(*anchors);
                let a = self.value(*anchors);
                let scale = gy[0] / b as f64;
                let mut ga = vec![0.0; b * d];
                let mut gp = [vec![0.0; b * d], vec![0.0; b * d]];
                for i in 0..b {
                    let ai = a.row(i);
                    let negs: Vec<(usize, f64)> = (0..b)
                        .filter(|&k| k != i)
                        .map(|k| (k, dot(ai, a.row(k)) / tau))
                        .collect();
                    for (slot, p) in [*pos1, *pos2].into_iter().enumerate() {
                        let pi = self.value(p).row(i);
                        let s_pos = dot(ai, pi) / tau;
                        let lse = log_sum_exp(
                            std::iter::once(s_pos).chain(negs.iter().map(|&(_, s)| s)),
                        );
                        // d/ds_pos = w_pos - 1, d/ds_k = w_k
                        let c_pos = scale * ((s_pos - lse).exp() - 1.0) / tau;
                        axpy(c_pos, pi, &mut ga[i * d..(i + 1) * d]);
                        axpy(c_pos, ai, &mut gp[slot][i * d..(i + 1) * d]);
                        for &(k, s) in &negs {
                            let c = scale * (s - lse).exp() / tau;
                            axpy(c, a.row(k), &mut ga[i * d..(i + 1) * d]);
                            axpy(c, ai, &mut ga[k * d..(k + 1) * d]);
                        }
                    }
                }
                let [g1, g2] = gp;
                out.push((*anchors, ga));
                out.push((*pos1, g1));
                out.push((*pos2, g2));
            }
            Op::Sum(x) => {
                out.push((*x, vec![gy[0]; self.value(*x).numel()]));
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                out.push((*x, vec![gy[0] / n as f64; n]));
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    out.push((v, vec![gy[0] * w]));
                }
            }
        }
        out.retain(|(v, _)| self.needs(*v));
        out
    }
}
