//! Reverse-mode differentiation over a linear tape of tensor operations.
//!
//! Every operation appends a node whose inputs already exist on the tape, so
//! node order is a topological order and the backward pass is a single
//! reverse sweep. Nodes that cannot reach a trainable leaf are never
//! differentiated, and only trainable leaves report gradients: frozen
//! parameters flow through the tape as constants.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kernels;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<S> {
    Leaf { param: Option<String> },
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Transpose { a: Var, rows: usize, cols: usize },
    Add { a: Var, b: Var },
    AddRow { a: Var, bias: Var },
    Scale { a: Var, factor: S },
    Reshape { a: Var },
    Gelu { a: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<S>, inv_std: Vec<S> },
    Softmax { a: Var },
    Attention { q: Var, k: Var, v: Var, dims: AttnDims, probs: Vec<S> },
    GatherRows { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<S> },
    Sum { a: Var },
}

#[derive(Debug)]
struct Node<S> {
    shape: Vec<usize>,
    value: Vec<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Layout of a batched multi-head attention call.
///
/// Inputs are `[batch·seq, heads·head_dim]` with head `h` occupying columns
/// `h·head_dim .. (h+1)·head_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnDims {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub head_dim: usize,
}

/// Gradients of a scalar loss with respect to the trainable leaves, by name.
#[derive(Debug, Clone, Default)]
pub struct Gradients<S> {
    by_name: BTreeMap<String, Vec<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, name: &str) -> Option<&[S]> {
        self.by_name.get(name).map(Vec::as_slice)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.by_name.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }
}

#[derive(Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// Splits a shape into `(rows, last)` treating all leading axes as rows.
fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let cols = *shape.last().expect("non-empty shape");
    (shape.iter().product::<usize>() / cols, cols)
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<S>, op: Op<S>, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<S> {
        &self.nodes[v.0]
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &[S] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    /// Copies a recorded value out as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor<S> {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape values are well-shaped")
    }

    /// Records a non-differentiable input.
    pub fn constant(&mut self, t: &Tensor<S>) -> Var {
        self.push(t.shape().to_vec(), t.values().to_vec(), Op::Leaf { param: None }, false)
    }

    /// Records a named parameter. Its gradient is reported by
    /// [`Tape::backward`] only if the tensor is trainable.
    pub fn param(&mut self, name: &str, t: &Tensor<S>) -> Var {
        let param = t.trainable.then(|| name.to_string());
        let needs = t.trainable;
        self.push(t.shape().to_vec(), t.values().to_vec(), Op::Leaf { param }, needs)
    }

    /// `[m×k] · [k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![S::zero(); m * n];
        kernels::matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let needs = self.needs(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b, m, k, n }, needs))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(mismatch("transpose", s, &[0, 0]));
        }
        let (rows, cols) = (s[0], s[1]);
        let x = self.value(a);
        let mut out = vec![S::zero(); rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = x[i * cols + j];
            }
        }
        let needs = self.needs(&[a]);
        Ok(self.push(vec![cols, rows], out, Op::Transpose { a, rows, cols }, needs))
    }

    /// Element-wise sum of equally shaped values.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("add", self.shape(a), self.shape(b)));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(&[a, b]);
        Ok(self.push(shape, out, Op::Add { a, b }, needs))
    }

    /// Adds a length-`C` vector to every row of a `[.., C]` value.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, cols) = rows_cols(self.shape(a));
        if self.shape(bias) != [cols] {
            return Err(mismatch("add_row", self.shape(a), self.shape(bias)));
        }
        let b = self.value(bias);
        let out = self
            .value(a)
            .chunks(cols)
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y))
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(&[a, bias]);
        Ok(self.push(shape, out, Op::AddRow { a, bias }, needs))
    }

    pub fn scale(&mut self, a: Var, factor: S) -> Var {
        let out = self.value(a).iter().map(|&x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(&[a]);
        self.push(shape, out, Op::Scale { a, factor }, needs)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.is_empty() || shape.iter().product::<usize>() != self.value(a).len() {
            return Err(mismatch("reshape", self.shape(a), shape));
        }
        let out = self.value(a).to_vec();
        let needs = self.needs(&[a]);
        Ok(self.push(shape.to_vec(), out, Op::Reshape { a }, needs))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| kernels::gelu(x)).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(&[a]);
        self.push(shape, out, Op::Gelu { a }, needs)
    }

    /// Normalizes each row over the last axis, then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: S) -> Result<Var> {
        let (rows, h) = rows_cols(self.shape(x));
        if self.shape(gamma) != [h] || self.shape(beta) != [h] {
            return Err(mismatch("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let hs = S::of_usize(h);
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut out = vec![S::zero(); rows * h];
        let mut xhat = vec![S::zero(); rows * h];
        let mut inv_std = vec![S::zero(); rows];
        for (r, row) in self.value(x).chunks(h).enumerate() {
            let mean = row.iter().copied().sum::<S>() / hs;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / hs;
            let inv = S::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..h {
                let xh = (row[j] - mean) * inv;
                xhat[r * h + j] = xh;
                out[r * h + j] = g[j] * xh + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let needs = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            shape,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            needs,
        ))
    }

    /// Row-wise softmax over the last axis. When a mask is given, entries
    /// with `false` are excluded and come out as exact zeros.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (_, cols) = rows_cols(self.shape(a));
        if let Some(m) = mask {
            if m.len() != self.value(a).len() {
                return Err(mismatch("softmax_rows mask", self.shape(a), &[m.len()]));
            }
        }
        let mut out = vec![S::zero(); self.value(a).len()];
        for (r, (row, o)) in self.value(a).chunks(cols).zip(out.chunks_mut(cols)).enumerate() {
            kernels::softmax_into(row, mask.map(|m| &m[r * cols..(r + 1) * cols]), o);
        }
        let shape = self.shape(a).to_vec();
        let needs = self.needs(&[a]);
        Ok(self.push(
            shape,
            out,
            Op::Softmax { a },
            needs,
        ))
    }

    /// Scaled dot-product attention, batched over sequences and heads.
    ///
    /// `key_mask` has one entry per `(batch, position)`; positions marked
    /// `false` are excluded as keys for every query in that sequence.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, dims: AttnDims, key_mask: Option<&[bool]>) -> Result<Var> {
        let AttnDims {
            batch,
            seq,
            heads,
            head_dim,
        } = dims;
        let width = heads * head_dim;
        let expect = [batch * seq, width];
        for x in [q, k, v] {
            if self.shape(x) != expect {
                return Err(mismatch("attention", self.shape(x), &expect));
            }
        }
        if let Some(m) = key_mask {
            if m.len() != batch * seq {
                return Err(mismatch("attention mask", &[batch, seq], &[m.len()]));
            }
        }
        let scale = S::one() / S::of_usize(head_dim).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![S::zero(); batch * heads * seq * seq];
        let mut out = vec![S::zero(); batch * seq * width];
        let mut scores = vec![S::zero(); seq];
        for b in 0..batch {
            let keep = key_mask.map(|m| &m[b * seq..(b + 1) * seq]);
            for h in 0..heads {
                let col = h * head_dim;
                for t in 0..seq {
                    let qt = &qv[(b * seq + t) * width + col..][..head_dim];
                    for (s, sc) in scores.iter_mut().enumerate() {
                        let ks = &kv[(b * seq + s) * width + col..][..head_dim];
                        *sc = qt.iter().zip(ks).map(|(&x, &y)| x * y).sum::<S>() * scale;
                    }
                    let p = &mut probs[((b * heads + h) * seq + t) * seq..][..seq];
                    kernels::softmax_into(&scores, keep, p);
                    let o = &mut out[(b * seq + t) * width + col..][..head_dim];
                    for (s, &ps) in p.iter().enumerate() {
                        if ps == S::zero() {
                            continue;
                        }
                        let vs = &vv[(b * seq + s) * width + col..][..head_dim];
                        for (od, &vd) in o.iter_mut().zip(vs) {
                            *od += ps * vd;
                        }
                    }
                }
            }
        }
        let needs = self.needs(&[q, k, v]);
        Ok(self.push(expect.to_vec(), out, Op::Attention { q, k, v, dims, probs }, needs))
    }

    /// Selects rows of a `[R×C]` table; repeated ids are allowed.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(mismatch("gather_rows", s, &[0, 0]));
        }
        let (rows, cols) = (s[0], s[1]);
        if let Some(&id) = ids.iter().find(|&&id| id >= rows) {
            return Err(Error::IndexOutOfRange { id, rows });
        }
        let t = self.value(table);
        let out = ids.iter().flat_map(|&i| t[i * cols..(i + 1) * cols].iter().copied()).collect();
        let needs = self.needs(&[table]);
        Ok(self.push(
            vec![ids.len(), cols],
            out,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of
    /// `logits` (`[B×C]`). Returns a `[1]` value.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() {
            return Err(mismatch("cross_entropy", s, &[labels.len()]));
        }
        let (batch, classes) = (s[0], s[1]);
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let mut probs = vec![S::zero(); batch * classes];
        let mut total = S::zero();
        for (r, row) in self.value(logits).chunks(classes).enumerate() {
            kernels::softmax_into(row, None, &mut probs[r * classes..(r + 1) * classes]);
            // log-sum-exp with the max term pulled out exactly, so tiny losses
            // keep full relative precision
            let (arg, max) = row
                .iter()
                .enumerate()
                .fold((0, S::neg_infinity()), |acc, (j, &x)| if x > acc.1 { (j, x) } else { acc });
            let rest: S = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != arg)
                .map(|(_, &x)| (x - max).exp())
                .sum();
            total += rest.ln_1p() - (row[labels[r]] - max);
        }
        let loss = total / S::of_usize(batch);
        let needs = self.needs(&[logits]);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).iter().copied().sum();
        let needs = self.needs(&[a]);
        self.push(vec![1], vec![total], Op::Sum { a }, needs)
    }

    /// Propagates `d loss` back through the tape.
    ///
    /// Returns gradients for trainable leaves that the loss depends on.
    /// Trainable leaves the loss does not reach are reported with zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let ln = self.node(loss);
        if ln.value.len() != 1 {
            return Err(Error::NonScalarLoss(ln.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if let Op::Leaf { param: Some(_) } = node.op {
                grads[idx] = Some(g);
                continue;
            }
            self.backward_node(node, &g, &mut grads);
        }

        let mut by_name: BTreeMap<String, Vec<S>> = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let Op::Leaf { param: Some(name) } = &node.op {
                let g = grads[idx].take().unwrap_or_else(|| vec![S::zero(); node.value.len()]);
                match by_name.get_mut(name) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    None => {
                        by_name.insert(name.clone(), g);
                    }
                }
            }
        }
        Ok(Gradients { by_name })
    }

    /// Adds `delta` into the gradient slot of `v` if `v` needs one.
    fn accumulate(&self, grads: &mut [Option<Vec<S>>], v: Var, f: impl FnOnce(&mut [S])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let slot = grads[v.0].get_or_insert_with(|| vec![S::zero(); len]);
        f(slot);
    }

    fn backward_node(&self, node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>]) {
        match &node.op {
            Op::Leaf { .. } => {}
            &Op::MatMul { a, b, m, k, n } => {
                let (av, bv) = (self.value(a), self.value(b));
                self.accumulate(grads, a, |da| kernels::matmul_grad_lhs(g, bv, da, m, k, n));
                self.accumulate(grads, b, |db| kernels::matmul_grad_rhs(av, g, db, m, k, n));
            }
            &Op::Transpose { a, rows, cols } => self.accumulate(grads, a, |da| {
                for i in 0..rows {
                    for j in 0..cols {
                        da[i * cols + j] += g[j * rows + i];
                    }
                }
            }),
            &Op::Add { a, b } => {
                self.accumulate(grads, a, |da| add_into(da, g));
                self.accumulate(grads, b, |db| add_into(db, g));
            }
            &Op::AddRow { a, bias } => {
                self.accumulate(grads, a, |da| add_into(da, g));
                self.accumulate(grads, bias, |db| {
                    for row in g.chunks(db.len()) {
                        add_into(db, row);
                    }
                });
            }
            &Op::Scale { a, factor } => self.accumulate(grads, a, |da| {
                da.iter_mut().zip(g).for_each(|(d, &x)| *d += x * factor);
            }),
            &Op::Reshape { a } => self.accumulate(grads, a, |da| add_into(da, g)),
            &Op::Gelu { a } => {
                let x = self.value(a);
                self.accumulate(grads, a, |da| {
                    for ((d, &xi), &gi) in da.iter_mut().zip(x).zip(g) {
                        *d += gi * kernels::gelu_grad(xi);
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let h = self.value(*gamma).len();
                let gam = self.value(*gamma);
                self.accumulate(grads, *gamma, |dg| {
                    for (gr, xr) in g.chunks(h).zip(xhat.chunks(h)) {
                        for j in 0..h {
                            dg[j] += gr[j] * xr[j];
                        }
                    }
                });
                self.accumulate(grads, *beta, |db| {
                    for gr in g.chunks(h) {
                        add_into(db, gr);
                    }
                });
                self.accumulate(grads, *x, |dx| {
                    let hs = S::of_usize(h);
                    for (r, (gr, xr)) in g.chunks(h).zip(xhat.chunks(h)).enumerate() {
                        let mut sum_d = S::zero();
                        let mut sum_dx = S::zero();
                        for j in 0..h {
                            let d = gr[j] * gam[j];
                            sum_d += d;
                            sum_dx += d * xr[j];
                        }
                        let c = inv_std[r] / hs;
                        for j in 0..h {
                            let d = gr[j] * gam[j];
                            dx[r * h + j] += c * (hs * d - sum_d - xr[j] * sum_dx);
                        }
                    }
                });
            }
            Op::Softmax { a } => {
                let cols = *node.shape.last().expect("non-empty");
                self.accumulate(grads, *a, |da| {
                    for ((y, dy), dx) in node.value.chunks(cols).zip(g.chunks(cols)).zip(da.chunks_mut(cols)) {
                        kernels::softmax_vjp_acc(y, dy, dx);
                    }
                });
            }
            Op::Attention { q, k, v, dims, probs } => self.attention_backward(*q, *k, *v, *dims, probs, g, grads),
            Op::GatherRows { table, ids } => {
                let cols = *node.shape.last().expect("non-empty");
                self.accumulate(grads, *table, |dt| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut dt[id * cols..(id + 1) * cols], &g[r * cols..(r + 1) * cols]);
                    }
                });
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let classes = probs.len() / labels.len();
                let scale = g[0] / S::of_usize(labels.len());
                self.accumulate(grads, *logits, |dl| {
                    for (r, &label) in labels.iter().enumerate() {
                        for c in 0..classes {
                            let onehot = if c == label { S::one() } else { S::zero() };
                            dl[r * classes + c] += scale * (probs[r * classes + c] - onehot);
                        }
                    }
                });
            }
            &Op::Sum { a } => self.accumulate(grads, a, |da| da.iter_mut().for_each(|d| *d += g[0])),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        dims: AttnDims,
        probs: &[S],
        g: &[S],
        grads: &mut [Option<Vec<S>>],
    ) {
        let AttnDims {
            batch,
            seq,
            heads,
            head_dim,
        } = dims;
        let width = heads * head_dim;
        let scale = S::one() / S::of_usize(head_dim).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let n = batch * seq * width;
        let mut dq = vec![S::zero(); n];
        let mut dk = vec![S::zero(); n];
        let mut dv = vec![S::zero(); n];
        let mut dp = vec![S::zero(); seq];
        let mut ds = vec![S::zero(); seq];
        let at = |b: usize, t: usize, col: usize| (b * seq + t) * width + col;
        for b in 0..batch {
            for h in 0..heads {
                let col = h * head_dim;
                for t in 0..seq {
                    let p = &probs[((b * heads + h) * seq + t) * seq..][..seq];
                    let go = &g[at(b, t, col)..][..head_dim];
                    for s in 0..seq {
                        let vs = &vv[at(b, s, col)..][..head_dim];
                        dp[s] = go.iter().zip(vs).map(|(&x, &y)| x * y).sum();
                        if p[s] != S::zero() {
                            let dvs = &mut dv[at(b, s, col)..][..head_dim];
                            for (d, &x) in dvs.iter_mut().zip(go) {
                                *d += p[s] * x;
                            }
                        }
                    }
                    ds.iter_mut().for_each(|x| *x = S::zero());
                    kernels::softmax_vjp_acc(p, &dp, &mut ds);
                    let qt = &qv[at(b, t, col)..][..head_dim];
                    for s in 0..seq {
                        let w = ds[s] * scale;
                        if w == S::zero() {
                            continue;
                        }
                        let ks = &kv[at(b, s, col)..][..head_dim];
                        for d in 0..head_dim {
                            dq[at(b, t, col) + d] += w * ks[d];
                            dk[at(b, s, col) + d] += w * qt[d];
                        }
                    }
                }
            }
        }
        self.accumulate(grads, q, |x| add_into(x, &dq));
        self.accumulate(grads, k, |x| add_into(x, &dk));
        self.accumulate(grads, v, |x| add_into(x, &dv));
    }
}

fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}
