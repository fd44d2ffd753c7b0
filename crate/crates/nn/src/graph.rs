//! Eager tape with reverse-mode differentiation.
//!
//! Every op evaluates immediately and appends a node holding its value and
//! whatever it needs for the backward pass. Nodes only ever reference earlier
//! nodes, so the tape is acyclic by construction and backward is a single
//! reverse sweep.

use std::collections::HashMap;

use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::tensor::{gemm, MatRef, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Row range of one sample inside a row-stacked batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub offset: usize,
    pub len: usize,
}

impl Segment {
    pub fn new(offset: usize, len: usize) -> Self {
        Self { offset, len }
    }

    /// Consecutive segments of the given lengths starting at row 0.
    pub fn stack(lens: &[usize]) -> Vec<Segment> {
        let mut offset = 0;
        lens.iter()
            .map(|&len| {
                let s = Segment { offset, len };
                offset += len;
                s
            })
            .collect()
    }

    pub fn end(&self) -> usize {
        self.offset + self.len
    }
}

/// One attention block: a query row range attending over a key/value range.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnBlock {
    pub query: Segment,
    pub key: Segment,
}

enum Op {
    Constant,
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    GatherRows {
        src: Var,
        idx: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        blocks: Vec<AttnBlock>,
        probs: Vec<f64>,
    },
    PhaseSignal {
        params: Var,
        time: Tensor,
        segs: Vec<Segment>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recording tape. Build a forward pass with the op methods, then call
/// [`Graph::backward`] on a scalar output.
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
    track_params: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> NnError {
    NnError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// Row-wise softmax in place; `-inf` entries get zero probability.
pub fn softmax_in_place(values: &mut [f64], cols: usize) {
    for row in values.chunks_mut(cols) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
}

pub fn softmax_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    let cols = t.cols();
    softmax_in_place(out.data_mut(), cols);
    out
}

impl Graph {
    /// Tape whose parameters are differentiable.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            param_index: HashMap::new(),
            track_params: true,
        }
    }

    /// Tape for inference: parameters enter as constants.
    pub fn inference() -> Self {
        Self {
            track_params: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Constant => false,
            Op::Leaf => true,
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b) => self.ng(*a) || self.ng(*b),
            Op::Scale(a, _)
            | Op::Gelu(a)
            | Op::Abs(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Reshape(a) => self.ng(*a),
            Op::ConcatRows(vs) => vs.iter().any(|v| self.ng(*v)),
            Op::GatherRows { src, .. } => self.ng(*src),
            Op::LayerNorm { x, gamma, beta, .. } => {
                self.ng(*x) || self.ng(*gamma) || self.ng(*beta)
            }
            Op::Attention { q, k, v, .. } => self.ng(*q) || self.ng(*k) || self.ng(*v),
            Op::PhaseSignal { params, .. } => self.ng(*params),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.ng(v)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Looks up a named parameter; repeated lookups share one node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(v) = self.param_index.get(name) {
            return Ok(*v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))?
            .clone();
        let v = if self.track_params {
            self.leaf(t)
        } else {
            self.constant(t)
        };
        self.param_index.insert(name.to_string(), v);
        self.params.push((name.to_string(), v));
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    fn row_broadcast(&self, a: Var, row: Var, name: &'static str) -> Result<(usize, usize)> {
        let (ta, tr) = (self.value(a), self.value(row));
        let (r, c) = ta.dims2();
        if tr.len() != c {
            return Err(mismatch(name, ta, tr));
        }
        Ok((r, c))
    }

    /// `a[m, n] + row[1, n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, c) = self.row_broadcast(a, row, "add_row")?;
        let r = self.value(row).data().to_vec();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(c) {
            for (x, y) in chunk.iter_mut().zip(&r) {
                *x += y;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// `a[m, n] * row[1, n]` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, c) = self.row_broadcast(a, row, "mul_row")?;
        let r = self.value(row).data().to_vec();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(c) {
            for (x, y) in chunk.iter_mut().zip(&r) {
                *x *= y;
            }
        }
        Ok(self.push(out, Op::MulRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.push(out, Op::Gelu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.push(out, Op::Abs(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::scalar(t.sum() / t.len().max(1) as f64);
        self.push(out, Op::Mean(a))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    pub fn concat_rows(&mut self, vars: &[Var]) -> Result<Var> {
        let first = vars
            .first()
            .ok_or_else(|| NnError::Invalid("concat_rows of nothing".into()))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for v in vars {
            let t = self.value(*v);
            if t.cols() != cols {
                return Err(mismatch("concat_rows", self.value(*first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(vars.to_vec())))
    }

    /// `out[i] = src[idx[i]]`, rows may repeat.
    pub fn gather_rows(&mut self, src: Var, idx: Vec<usize>) -> Result<Var> {
        let t = self.value(src);
        let (r, c) = t.dims2();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            if i >= r {
                return Err(NnError::Invalid(format!("gather_rows index {i} >= {r}")));
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::matrix(idx.len(), c, data)?;
        Ok(self.push(out, Op::GatherRows { src, idx }))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` rows.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (_, c) = self.row_broadcast(x, gamma, "layer_norm")?;
        self.row_broadcast(x, beta, "layer_norm")?;
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let t = self.value(x);
        let mut xhat = Vec::with_capacity(t.len());
        let mut rstd = Vec::with_capacity(t.rows());
        let mut out = Vec::with_capacity(t.len());
        for row in t.data().chunks(c) {
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd.push(rs);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mu) * rs;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    /// Multi-head scaled dot-product attention over row blocks.
    ///
    /// `q` is `[Rq, d]`, `k` and `v` are `[Rk, d]`. Each block attends its
    /// query rows over its key rows only; rows not covered by any block are
    /// zero. `key_mask[j] == true` marks key row `j` as padding.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        blocks: Vec<AttnBlock>,
        key_mask: Option<&[bool]>,
    ) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let (rq, d) = tq.dims2();
        let (rk, dk) = tk.dims2();
        if dk != d || tv.dims2() != (rk, d) {
            return Err(mismatch("attention", tq, tk));
        }
        if heads == 0 || d % heads != 0 {
            return Err(NnError::Invalid(format!("{d} channels not divisible into {heads} heads")));
        }
        if let Some(m) = key_mask {
            if m.len() != rk {
                return Err(NnError::Invalid("key mask length".into()));
            }
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = vec![0.0; rq * d];
        let mut probs = Vec::new();
        for blk in &blocks {
            let (qs, ks) = (blk.query, blk.key);
            if qs.end() > rq || ks.end() > rk || ks.len == 0 {
                return Err(NnError::Invalid("attention block out of range".into()));
            }
            if let Some(m) = key_mask {
                if m[ks.offset..ks.end()].iter().all(|&x| x) {
                    return Err(NnError::Invalid("attention block has every key masked".into()));
                }
            }
            for h in 0..heads {
                let mut scores = vec![0.0; qs.len * ks.len];
                gemm(
                    qs.len,
                    dh,
                    ks.len,
                    scale,
                    MatRef::row_major(&tq.data()[qs.offset * d + h * dh..], d),
                    MatRef::transposed(&tk.data()[ks.offset * d + h * dh..], d),
                    0.0,
                    &mut scores,
                    ks.len,
                );
                if let Some(m) = key_mask {
                    for row in scores.chunks_mut(ks.len) {
                        for (j, s) in row.iter_mut().enumerate() {
                            if m[ks.offset + j] {
                                *s = f64::NEG_INFINITY;
                            }
                        }
                    }
                }
                softmax_in_place(&mut scores, ks.len);
                gemm(
                    qs.len,
                    ks.len,
                    dh,
                    1.0,
                    MatRef::row_major(&scores, ks.len),
                    MatRef::row_major(&tv.data()[ks.offset * d + h * dh..], d),
                    0.0,
                    &mut out[qs.offset * d + h * dh..],
                    d,
                );
                probs.extend_from_slice(&scores);
            }
        }
        let out = Tensor::matrix(rq, d, out)?;
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                blocks,
                probs,
            },
        ))
    }

    /// Periodic reparameterization `A * sin(F * (T - S)) + B`.
    ///
    /// `params` is `[4 * B, Q]` with rows ordered F, A, B, S per sample;
    /// `time` is `[sum N_b, Q]` and `segs[b]` selects the rows of sample `b`.
    pub fn phase_signal(&mut self, params: Var, time: Tensor, segs: Vec<Segment>) -> Result<Var> {
        let p = self.value(params);
        let (pr, q) = p.dims2();
        let (tr, tq) = time.dims2();
        if tq != q || pr != 4 * segs.len() {
            return Err(mismatch("phase_signal", p, &time));
        }
        if segs.iter().any(|s| s.end() > tr) {
            return Err(NnError::Invalid("phase_signal segment out of range".into()));
        }
        let mut out = vec![0.0; tr * q];
        for (b, s) in segs.iter().enumerate() {
            let f = p.row_slice(4 * b);
            let a = p.row_slice(4 * b + 1);
            let o = p.row_slice(4 * b + 2);
            let sh = p.row_slice(4 * b + 3);
            for r in s.offset..s.end() {
                let t = time.row_slice(r);
                for j in 0..q {
                    out[r * q + j] = a[j] * (f[j] * (t[j] - sh[j])).sin() + o[j];
                }
            }
        }
        let out = Tensor::matrix(tr, q, out)?;
        Ok(self.push(out, Op::PhaseSignal { params, time, segs }))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(NnError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            let (before, _) = grads.split_at_mut(i);
            self.backprop_node(node, &dy, before);
            grads[i] = Some(dy);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn backprop_node(&self, node: &Node, dy: &Tensor, g: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let ng = |v: Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !ng(v) {
                return;
            }
            let slot = g[v.0].get_or_insert_with(|| Tensor::zeros(val(v).shape()));
            f(slot.data_mut());
        };
        let dyd = dy.data();
        match &node.op {
            Op::Constant | Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = ta.dims2();
                let n = tb.cols();
                // dA = dY B^T, dB = A^T dY
                acc(*a, &|buf| {
                    gemm(m, n, k, 1.0, MatRef::row_major(dyd, n), MatRef::transposed(tb.data(), n), 1.0, buf, k)
                });
                acc(*b, &|buf| {
                    gemm(k, m, n, 1.0, MatRef::transposed(ta.data(), k), MatRef::row_major(dyd, n), 1.0, buf, n)
                });
            }
            Op::Add(a, b) => {
                acc(*a, &|buf| add_into(buf, dyd));
                acc(*b, &|buf| add_into(buf, dyd));
            }
            Op::Sub(a, b) => {
                acc(*a, &|buf| add_into(buf, dyd));
                acc(*b, &|buf| {
                    for (x, d) in buf.iter_mut().zip(dyd) {
                        *x -= d;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a).data(), val(*b).data());
                acc(*a, &|buf| {
                    for ((x, d), y) in buf.iter_mut().zip(dyd).zip(tb) {
                        *x += d * y;
                    }
                });
                acc(*b, &|buf| {
                    for ((x, d), y) in buf.iter_mut().zip(dyd).zip(ta) {
                        *x += d * y;
                    }
                });
            }
            Op::AddRow(a, row) => {
                let c = val(*row).len();
                acc(*a, &|buf| add_into(buf, dyd));
                acc(*row, &|buf| {
                    for chunk in dyd.chunks(c) {
                        add_into(buf, chunk);
                    }
                });
            }
            Op::MulRow(a, row) => {
                let r = val(*row).data();
                let c = r.len();
                let ta = val(*a).data();
                acc(*a, &|buf| {
                    for (bc, dc) in buf.chunks_mut(c).zip(dyd.chunks(c)) {
                        for ((x, d), y) in bc.iter_mut().zip(dc).zip(r) {
                            *x += d * y;
                        }
                    }
                });
                acc(*row, &|buf| {
                    for (dc, ac) in dyd.chunks(c).zip(ta.chunks(c)) {
                        for ((x, d), y) in buf.iter_mut().zip(dc).zip(ac) {
                            *x += d * y;
                        }
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &|buf| {
                for (x, d) in buf.iter_mut().zip(dyd) {
                    *x += s * d;
                }
            }),
            Op::Gelu(a) => {
                let ta = val(*a).data();
                acc(*a, &|buf| {
                    for ((x, d), v) in buf.iter_mut().zip(dyd).zip(ta) {
                        *x += d * gelu_grad(*v);
                    }
                });
            }
            Op::Abs(a) => {
                let ta = val(*a).data();
                acc(*a, &|buf| {
                    for ((x, d), v) in buf.iter_mut().zip(dyd).zip(ta) {
                        if *v > 0.0 {
                            *x += d;
                        } else if *v < 0.0 {
                            *x -= d;
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &|buf| {
                for x in buf.iter_mut() {
                    *x += dyd[0];
                }
            }),
            Op::Mean(a) => acc(*a, &|buf| {
                let s = dyd[0] / buf.len().max(1) as f64;
                for x in buf.iter_mut() {
                    *x += s;
                }
            }),
            Op::Reshape(a) => acc(*a, &|buf| add_into(buf, dyd)),
            Op::ConcatRows(vars) => {
                let mut offset = 0;
                for v in vars {
                    let n = val(*v).len();
                    let part = &dyd[offset..offset + n];
                    acc(*v, &|buf| add_into(buf, part));
                    offset += n;
                }
            }
            Op::GatherRows { src, idx } => {
                let c = val(*src).cols();
                acc(*src, &|buf| {
                    for (i, &r) in idx.iter().enumerate() {
                        add_into(&mut buf[r * c..(r + 1) * c], &dyd[i * c..(i + 1) * c]);
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gm = val(*gamma).data();
                let c = gm.len();
                acc(*gamma, &|buf| {
                    for (dc, hc) in dyd.chunks(c).zip(xhat.chunks(c)) {
                        for ((x, d), h) in buf.iter_mut().zip(dc).zip(hc) {
                            *x += d * h;
                        }
                    }
                });
                acc(*beta, &|buf| {
                    for dc in dyd.chunks(c) {
                        add_into(buf, dc);
                    }
                });
                acc(*x, &|buf| {
                    let mut dh = vec![0.0; c];
                    for (r, ((bc, dc), hc)) in buf
                        .chunks_mut(c)
                        .zip(dyd.chunks(c))
                        .zip(xhat.chunks(c))
                        .enumerate()
                    {
                        for j in 0..c {
                            dh[j] = dc[j] * gm[j];
                        }
                        let m1 = dh.iter().sum::<f64>() / c as f64;
                        let m2 = dh.iter().zip(hc).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for j in 0..c {
                            bc[j] += rstd[r] * (dh[j] - m1 - hc[j] * m2);
                        }
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                blocks,
                probs,
            } => {
                let (tq, tk, tv) = (val(*q), val(*k), val(*v));
                let d = tq.cols();
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dq = vec![0.0; tq.len()];
                let mut dk = vec![0.0; tk.len()];
                let mut dv = vec![0.0; tv.len()];
                let mut p_off = 0;
                for blk in blocks {
                    let (qs, ks) = (blk.query, blk.key);
                    for h in 0..*heads {
                        let n = qs.len * ks.len;
                        let p = &probs[p_off..p_off + n];
                        p_off += n;
                        let dout = &dyd[qs.offset * d + h * dh..];
                        // dV += P^T dO
                        gemm(ks.len, qs.len, dh, 1.0, MatRef::transposed(p, ks.len), MatRef::row_major(dout, d), 1.0, &mut dv[ks.offset * d + h * dh..], d);
                        // dP = dO V^T
                        let mut dp = vec![0.0; n];
                        gemm(qs.len, dh, ks.len, 1.0, MatRef::row_major(dout, d), MatRef::transposed(&tv.data()[ks.offset * d + h * dh..], d), 0.0, &mut dp, ks.len);
                        // dS = P * (dP - rowsum(dP * P)), folded with the score scale
                        for (dpr, pr) in dp.chunks_mut(ks.len).zip(p.chunks(ks.len)) {
                            let dot: f64 = dpr.iter().zip(pr).map(|(a, b)| a * b).sum();
                            for (x, pv) in dpr.iter_mut().zip(pr) {
                                *x = pv * (*x - dot) * scale;
                            }
                        }
                        gemm(qs.len, ks.len, dh, 1.0, MatRef::row_major(&dp, ks.len), MatRef::row_major(&tk.data()[ks.offset * d + h * dh..], d), 1.0, &mut dq[qs.offset * d + h * dh..], d);
                        gemm(ks.len, qs.len, dh, 1.0, MatRef::transposed(&dp, ks.len), MatRef::row_major(&tq.data()[qs.offset * d + h * dh..], d), 1.0, &mut dk[ks.offset * d + h * dh..], d);
                    }
                }
                acc(*q, &|buf| add_into(buf, &dq));
                acc(*k, &|buf| add_into(buf, &dk));
                acc(*v, &|buf| add_into(buf, &dv));
            }
            Op::PhaseSignal { params, time, segs } => {
                let p = val(*params);
                let q = p.cols();
                acc(*params, &|buf| {
                    for (b, s) in segs.iter().enumerate() {
                        let f = p.row_slice(4 * b);
                        let a = p.row_slice(4 * b + 1);
                        let sh = p.row_slice(4 * b + 3);
                        let base = 4 * b * q;
                        for r in s.offset..s.end() {
                            let t = time.row_slice(r);
                            let dr = &dyd[r * q..(r + 1) * q];
                            for j in 0..q {
                                let dt = t[j] - sh[j];
                                let u = f[j] * dt;
                                let (su, cu) = u.sin_cos();
                                let d = dr[j];
                                buf[base + j] += d * a[j] * cu * dt;
                                buf[base + q + j] += d * su;
                                buf[base + 2 * q + j] += d;
                                buf[base + 3 * q + j] -= d * a[j] * cu * f[j];
                            }
                        }
                    }
                });
            }
        }
    }
}

fn add_into(buf: &mut [f64], src: &[f64]) {
    for (x, s) in buf.iter_mut().zip(src) {
        *x += s;
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(String, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of every parameter looked up on the tape, by name.
    pub fn params(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .filter_map(|(name, v)| self.get(*v).map(|g| (name.clone(), g.clone())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(2, 3, vec![1., -2., 3., 0.5, 7., -1.]).unwrap());
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn square_gives_twice_x() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(vec![1., 2., 3.]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2., 4., 6.]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(vec![1., 2.]));
        assert!(matches!(g.backward(x), Err(NnError::NonScalarLoss(_))));
    }

    #[test]
    fn shape_mismatch_reported() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::row(vec![1., 2.]));
        let b = g.leaf(Tensor::row(vec![1., 2., 3.]));
        assert!(matches!(g.add(a, b), Err(NnError::ShapeMismatch { .. })));
        assert!(g.matmul(a, b).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let t = Tensor::matrix(3, 4, vec![1., 2., 3., 4., -50., 0., 50., 1., 0., 0., 0., 0.]).unwrap();
        let s = softmax_rows(&t);
        for r in 0..3 {
            let total: f64 = s.row_slice(r).iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_keys_match_unpadded_attention() {
        let d = 4;
        let q = Tensor::matrix(2, d, (0..8).map(|i| (i as f64 * 0.3).sin()).collect()).unwrap();
        let kv = Tensor::matrix(3, d, (0..12).map(|i| (i as f64 * 0.7).cos()).collect()).unwrap();
        let mut padded = kv.data().to_vec();
        padded.extend_from_slice(&[9.0; 4]);
        let kvp = Tensor::matrix(4, d, padded).unwrap();

        let mut g = Graph::new();
        let (qv, kvv) = (g.constant(q.clone()), g.constant(kv));
        let blk = vec![AttnBlock { query: Segment::new(0, 2), key: Segment::new(0, 3) }];
        let plain = g.attention(qv, kvv, kvv, 2, blk, None).unwrap();
        let kvpv = g.constant(kvp);
        let blk = vec![AttnBlock { query: Segment::new(0, 2), key: Segment::new(0, 4) }];
        let mask = [false, false, false, true];
        let masked = g.attention(qv, kvpv, kvpv, 2, blk, Some(&mask)).unwrap();
        assert!(g.value(plain).max_abs_diff(g.value(masked)) < 1e-15);
    }
}
