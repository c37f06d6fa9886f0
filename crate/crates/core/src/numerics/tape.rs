//! Reverse-mode differentiation over a linear tape of matrix operations.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the tape from the root towards the leaves, so nodes only ever
//! refer to earlier nodes and a single reverse sweep suffices.

use std::rc::Rc;

use super::params::{Gradients, ParamId, ParamSets};
use super::tensor::{gemm, Tensor};
use crate::error::{Result, SanError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// How gradient-reversal nodes behave during the backward sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrlMode {
    /// Multiply the upstream gradient by `-coeff`.
    Reverse,
    /// Treat the node as a plain identity.
    PassThrough,
}

/// Compressed sparse row matrix with constant entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicate positions are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0; n_rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < n_rows && c < n_cols, "triplet ({r},{c}) outside {n_rows}x{n_cols}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
        }
        for i in 0..n_rows {
            indptr[i + 1] += indptr[i];
        }
        SparseMatrix {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.n_rows, self.n_cols]);
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                t.values_mut()[r * self.n_cols + c] += v;
            }
        }
        t
    }

    fn mul_dense(&self, x: &[f64], m: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows * m];
        for r in 0..self.n_rows {
            let dst = &mut out[r * m..(r + 1) * m];
            for (c, v) in self.row(r) {
                for (d, s) in dst.iter_mut().zip(&x[c * m..(c + 1) * m]) {
                    *d += v * s;
                }
            }
        }
        out
    }

    fn tmul_dense(&self, g: &[f64], m: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols * m];
        for r in 0..self.n_rows {
            let src = &g[r * m..(r + 1) * m];
            for (c, v) in self.row(r) {
                for (d, s) in out[c * m..(c + 1) * m].iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
        out
    }
}

/// Per-node neighbor lists (each list includes the node itself when
/// self-loops are wanted).
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhoods {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl Neighborhoods {
    pub fn new(lists: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut neighbors = Vec::new();
        for l in lists {
            neighbors.extend(l);
            offsets.push(neighbors.len());
        }
        Neighborhoods { offsets, neighbors }
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn of(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    fn edge_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    fn n_edges(&self) -> usize {
        self.neighbors.len()
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Affine(Var, Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Grl(Var, f64),
    Propagate(Rc<SparseMatrix>, Var),
    SegmentMean(Rc<Vec<(usize, usize)>>, Var),
    ConcatCols(Var, Var),
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Attention(Box<AttentionSaved>),
}

#[derive(Debug)]
struct AttentionSaved {
    z: Var,
    a_src: Var,
    a_dst: Var,
    graph: Rc<Neighborhoods>,
    heads: usize,
    slope: f64,
    /// Per (edge, head): softmax weight.
    alpha: Vec<f64>,
    /// Per (edge, head): attention logit before the leaky ReLU.
    pre: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn leaky(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

/// Row-wise softmax of a matrix.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let n = logits.rows();
    let c = logits.cols();
    let mut out = logits.clone();
    for i in 0..n {
        let row = &mut out.values_mut()[i * c..(i + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Records a constant input (no gradient is reported for it).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    /// Records a parameter leaf. Each call creates a fresh leaf; gradients of
    /// repeated uses are summed into the same [`ParamId`] slot.
    pub fn param(&mut self, params: &ParamSets, id: ParamId) -> Var {
        self.push(params.get(id).clone(), Op::Param(id))
    }

    fn as_matrix(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = self.value(v);
        match t.shape().len() {
            1 => Ok((1, t.cols())),
            2 => Ok((t.rows(), t.cols())),
            _ => Err(SanError::dim(op, t.shape(), &[])),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.as_matrix(a, "matmul")?;
        let (k2, m) = self.as_matrix(b, "matmul")?;
        if k != k2 {
            return Err(SanError::dim("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let out = gemm(self.value(a).values(), (n, k), false, self.value(b).values(), (k, m), false);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b)))
    }

    /// `input · weights + bias`, row by row.
    pub fn affine(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let (n, d_in) = self.as_matrix(input, "affine")?;
        let w = self.value(weights);
        if !w.is_matrix() || w.rows() != d_in {
            return Err(SanError::dim("affine", self.value(input).shape(), w.shape()));
        }
        let d_out = w.cols();
        let b = self.value(bias);
        if b.shape() != [d_out] {
            return Err(SanError::dim("affine", w.shape(), b.shape()));
        }
        let mut out = gemm(self.value(input).values(), (n, d_in), false, w.values(), (d_in, d_out), false);
        let bv = b.values();
        for row in out.chunks_mut(d_out) {
            for (o, bb) in row.iter_mut().zip(bv) {
                *o += bb;
            }
        }
        Ok(self.push(Tensor::new(vec![n, d_out], out)?, Op::Affine(input, weights, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(SanError::dim("add", ta.shape(), tb.shape()));
        }
        let mut out = ta.clone();
        out.add_assign(tb);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds the vector `b` to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, m) = self.as_matrix(x, "add_bias")?;
        if self.value(b).shape() != [m] {
            return Err(SanError::dim("add_bias", self.value(x).shape(), self.value(b).shape()));
        }
        let mut out = self.value(x).clone();
        let bv = self.value(b).values();
        for row in out.values_mut().chunks_mut(m) {
            for (o, bb) in row.iter_mut().zip(bv) {
                *o += bb;
            }
        }
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scaled(c);
        self.push(out, Op::Scale(a, c))
    }

    /// Elementwise `max(0, v)`; the derivative at 0 is taken to be 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for v in out.values_mut() {
            if *v <= 0.0 {
                *v = 0.0;
            }
        }
        self.push(out, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let mut out = self.value(a).clone();
        for v in out.values_mut() {
            *v = leaky(*v, slope);
        }
        self.push(out, Op::LeakyRelu(a, slope))
    }

    /// Gradient reversal: identity forward, `-coeff` times the upstream
    /// gradient backward.
    pub fn grl(&mut self, a: Var, coeff: f64) -> Result<Var> {
        if !(coeff >= 0.0) {
            return Err(SanError::Config(format!("grl coefficient must be >= 0, got {coeff}")));
        }
        let out = self.value(a).clone();
        Ok(self.push(out, Op::Grl(a, coeff)))
    }

    /// `adj · x` for a constant sparse `adj`.
    pub fn propagate(&mut self, adj: Rc<SparseMatrix>, x: Var) -> Result<Var> {
        let (n, m) = self.as_matrix(x, "propagate")?;
        if adj.n_cols() != n {
            return Err(SanError::dim("propagate", &[adj.n_rows(), adj.n_cols()], &[n, m]));
        }
        let out = adj.mul_dense(self.value(x).values(), m);
        let t = Tensor::new(vec![adj.n_rows(), m], out)?;
        Ok(self.push(t, Op::Propagate(adj, x)))
    }

    /// Mean of each contiguous `(start, len)` row segment.
    pub fn segment_mean(&mut self, segments: Rc<Vec<(usize, usize)>>, x: Var) -> Result<Var> {
        let (n, m) = self.as_matrix(x, "segment_mean")?;
        let xv = self.value(x).values();
        let mut out = vec![0.0; segments.len() * m];
        for (s, &(start, len)) in segments.iter().enumerate() {
            if len == 0 || start + len > n {
                return Err(SanError::Index {
                    what: "segment",
                    index: start + len,
                    bound: n,
                });
            }
            let dst = &mut out[s * m..(s + 1) * m];
            for r in start..start + len {
                for (d, v) in dst.iter_mut().zip(&xv[r * m..(r + 1) * m]) {
                    *d += v;
                }
            }
            let inv = 1.0 / len as f64;
            for d in dst.iter_mut() {
                *d *= inv;
            }
        }
        let t = Tensor::new(vec![segments.len(), m], out)?;
        Ok(self.push(t, Op::SegmentMean(segments, x)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, ma) = self.as_matrix(a, "concat_cols")?;
        let (nb, mb) = self.as_matrix(b, "concat_cols")?;
        if na != nb {
            return Err(SanError::dim("concat_cols", self.value(a).shape(), self.value(b).shape()));
        }
        let (ta, tb) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(na * (ma + mb));
        for i in 0..na {
            out.extend_from_slice(&ta.values()[i * ma..(i + 1) * ma]);
            out.extend_from_slice(&tb.values()[i * mb..(i + 1) * mb]);
        }
        let t = Tensor::new(vec![na, ma + mb], out)?;
        Ok(self.push(t, Op::ConcatCols(a, b)))
    }

    /// Mean over rows of `-log softmax(logits)[target]`, evaluated through
    /// log-sum-exp. Produces a one-element tensor.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, c) = self.as_matrix(logits, "softmax_cross_entropy")?;
        if c < 2 {
            return Err(SanError::dim("softmax_cross_entropy", &[n, c], &[n, 2]));
        }
        if targets.len() != n {
            return Err(SanError::dim("softmax_cross_entropy", &[n, c], &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(SanError::Index {
                what: "class",
                index: bad,
                bound: c,
            });
        }
        let lv = self.value(logits).values();
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        for i in 0..n {
            let row = &lv[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            total += lse - row[targets[i]];
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
        }
        let loss = total / n as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Multi-head additive attention over fixed neighborhoods.
    ///
    /// `z` is `[n, heads*f]` (already projected), `a_src` and `a_dst` are
    /// `[heads, f]`. For head `k`, node `i` attends to each `j` in its
    /// neighborhood with logit `leaky(a_dst·z_i + a_src·z_j)`, normalized by
    /// softmax over the neighborhood. Head outputs are concatenated.
    pub fn attention(
        &mut self,
        z: Var,
        a_src: Var,
        a_dst: Var,
        graph: Rc<Neighborhoods>,
        heads: usize,
        slope: f64,
    ) -> Result<Var> {
        let (n, width) = self.as_matrix(z, "attention")?;
        if heads == 0 || width % heads != 0 {
            return Err(SanError::dim("attention", &[n, width], &[heads]));
        }
        let f = width / heads;
        for a in [a_src, a_dst] {
            if self.value(a).shape() != [heads, f] {
                return Err(SanError::dim("attention", self.value(a).shape(), &[heads, f]));
            }
        }
        if graph.n_nodes() != n {
            return Err(SanError::dim("attention", &[graph.n_nodes()], &[n]));
        }
        let zv = self.value(z).values();
        let src = self.value(a_src).values();
        let dst = self.value(a_dst).values();
        // s[i,k] = a_dst[k]·z[i,k], t[j,k] = a_src[k]·z[j,k]
        let mut s = vec![0.0; n * heads];
        let mut t = vec![0.0; n * heads];
        for i in 0..n {
            for k in 0..heads {
                let zi = &zv[i * width + k * f..i * width + (k + 1) * f];
                s[i * heads + k] = zi.iter().zip(&dst[k * f..(k + 1) * f]).map(|(a, b)| a * b).sum();
                t[i * heads + k] = zi.iter().zip(&src[k * f..(k + 1) * f]).map(|(a, b)| a * b).sum();
            }
        }
        let e_total = graph.n_edges();
        let mut pre = vec![0.0; e_total * heads];
        let mut alpha = vec![0.0; e_total * heads];
        let mut out = vec![0.0; n * width];
        for i in 0..n {
            let range = graph.edge_range(i);
            if range.is_empty() {
                return Err(SanError::Consistency(format!("node {i} has an empty neighborhood")));
            }
            for k in 0..heads {
                let mut max = f64::NEG_INFINITY;
                for e in range.clone() {
                    let j = graph.neighbors[e];
                    let u = s[i * heads + k] + t[j * heads + k];
                    pre[e * heads + k] = u;
                    max = max.max(leaky(u, slope));
                }
                let mut sum = 0.0;
                for e in range.clone() {
                    let w = (leaky(pre[e * heads + k], slope) - max).exp();
                    alpha[e * heads + k] = w;
                    sum += w;
                }
                for e in range.clone() {
                    alpha[e * heads + k] /= sum;
                    let a = alpha[e * heads + k];
                    let j = graph.neighbors[e];
                    let zj = &zv[j * width + k * f..j * width + (k + 1) * f];
                    let oi = &mut out[i * width + k * f..i * width + (k + 1) * f];
                    for (o, v) in oi.iter_mut().zip(zj) {
                        *o += a * v;
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, width], out)?;
        Ok(self.push(
            value,
            Op::Attention(Box::new(AttentionSaved {
                z,
                a_src,
                a_dst,
                graph,
                heads,
                slope,
                alpha,
                pre,
            })),
        ))
    }

    /// Attention weights saved by an [`attention`](Self::attention) node,
    /// laid out as `[edge][head]`.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention(saved) => Some(&saved.alpha),
            _ => None,
        }
    }

    /// Backpropagates from a scalar root with gradient reversal active.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        self.backward_with(root, GrlMode::Reverse)
    }

    pub fn backward_with(&self, root: Var, mode: GrlMode) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(SanError::dim("backward", rv.shape(), &[1]));
        }
        let seed = Tensor::filled(rv.shape(), 1.0);
        let node_grads = self.sweep(root, seed, mode)?;
        Ok(self.collect(node_grads))
    }

    /// Vector-Jacobian product: gradients of `<upstream, root>` with respect
    /// to arbitrary earlier nodes. Untouched nodes get zeros.
    pub fn vjp(&self, root: Var, upstream: Tensor, wrt: &[Var], mode: GrlMode) -> Result<Vec<Tensor>> {
        if upstream.shape() != self.value(root).shape() {
            return Err(SanError::dim("vjp", upstream.shape(), self.value(root).shape()));
        }
        let grads = self.sweep(root, upstream, mode)?;
        Ok(wrt
            .iter()
            .map(|v| {
                grads[v.0]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(self.value(*v).shape()))
            })
            .collect())
    }

    fn collect(&self, node_grads: Vec<Option<Tensor>>) -> Gradients {
        let max_id = self
            .nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Param(id) => Some(id.0 + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        let mut out = Gradients::with_len(max_id);
        for (node, g) in self.nodes.iter().zip(node_grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                out.accumulate(*id, &g);
            }
        }
        out
    }

    fn sweep(&self, root: Var, seed: Tensor, mode: GrlMode) -> Result<Vec<Option<Tensor>>> {
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed);

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input | Op::Param(_) => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (n, k) = self.as_matrix(*a, "matmul")?;
                    let (_, m) = self.as_matrix(*b, "matmul")?;
                    let ga = gemm(g.values(), (n, m), false, self.value(*b).values(), (k, m), true);
                    let gb = gemm(self.value(*a).values(), (n, k), true, g.values(), (n, m), false);
                    acc(&mut grads, *a, Tensor::new(self.value(*a).shape().to_vec(), ga)?);
                    acc(&mut grads, *b, Tensor::new(self.value(*b).shape().to_vec(), gb)?);
                }
                Op::Affine(x, w, b) => {
                    let (n, d_in) = self.as_matrix(*x, "affine")?;
                    let d_out = self.value(*w).cols();
                    let gx = gemm(g.values(), (n, d_out), false, self.value(*w).values(), (d_in, d_out), true);
                    let gw = gemm(self.value(*x).values(), (n, d_in), true, g.values(), (n, d_out), false);
                    let mut gb = vec![0.0; d_out];
                    for row in g.values().chunks(d_out) {
                        for (acc_b, v) in gb.iter_mut().zip(row) {
                            *acc_b += v;
                        }
                    }
                    acc(&mut grads, *x, Tensor::new(self.value(*x).shape().to_vec(), gx)?);
                    acc(&mut grads, *w, Tensor::new(vec![d_in, d_out], gw)?);
                    acc(&mut grads, *b, Tensor::vector(gb));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddBias(x, b) => {
                    let m = g.cols();
                    let mut gb = vec![0.0; m];
                    for row in g.values().chunks(m) {
                        for (d, v) in gb.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    acc(&mut grads, *b, Tensor::vector(gb));
                    acc(&mut grads, *x, g);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g.scaled(*c)),
                Op::Relu(a) => {
                    let mut ga = g;
                    for (gv, out) in ga.values_mut().iter_mut().zip(node.value.values()) {
                        if *out <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LeakyRelu(a, slope) => {
                    let mut ga = g;
                    for (gv, x) in ga.values_mut().iter_mut().zip(self.value(*a).values()) {
                        if *x <= 0.0 {
                            *gv *= slope;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Grl(a, coeff) => {
                    let ga = match mode {
                        GrlMode::Reverse => g.scaled(-coeff),
                        GrlMode::PassThrough => g,
                    };
                    acc(&mut grads, *a, ga);
                }
                Op::Propagate(adj, x) => {
                    let m = g.cols();
                    let gx = adj.tmul_dense(g.values(), m);
                    acc(&mut grads, *x, Tensor::new(self.value(*x).shape().to_vec(), gx)?);
                }
                Op::SegmentMean(segments, x) => {
                    let m = g.cols();
                    let mut gx = Tensor::zeros(self.value(*x).shape());
                    for (s, &(start, len)) in segments.iter().enumerate() {
                        let inv = 1.0 / len as f64;
                        let src = &g.values()[s * m..(s + 1) * m];
                        for r in start..start + len {
                            for (d, v) in gx.row_mut(r).iter_mut().zip(src) {
                                *d += v * inv;
                            }
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::ConcatCols(a, b) => {
                    let (n, ma) = self.as_matrix(*a, "concat_cols")?;
                    let mb = self.value(*b).cols();
                    let mut ga = Vec::with_capacity(n * ma);
                    let mut gb = Vec::with_capacity(n * mb);
                    for row in g.values().chunks(ma + mb) {
                        ga.extend_from_slice(&row[..ma]);
                        gb.extend_from_slice(&row[ma..]);
                    }
                    acc(&mut grads, *a, Tensor::new(self.value(*a).shape().to_vec(), ga)?);
                    acc(&mut grads, *b, Tensor::new(self.value(*b).shape().to_vec(), gb)?);
                }
                Op::SoftmaxXent {
                    logits,
                    targets,
                    probs,
                } => {
                    let (n, c) = self.as_matrix(*logits, "softmax_cross_entropy")?;
                    let up = g.item() / n as f64;
                    let mut gl = probs.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        gl[i * c + t] -= 1.0;
                    }
                    for v in gl.iter_mut() {
                        *v *= up;
                    }
                    acc(&mut grads, *logits, Tensor::new(self.value(*logits).shape().to_vec(), gl)?);
                }
                Op::Attention(saved) => {
                    let (gz, gsrc, gdst) = self.attention_backward(saved, &g);
                    acc(&mut grads, saved.z, gz);
                    acc(&mut grads, saved.a_src, gsrc);
                    acc(&mut grads, saved.a_dst, gdst);
                }
            }
        }
        Ok(grads)
    }

    fn attention_backward(&self, saved: &AttentionSaved, g: &Tensor) -> (Tensor, Tensor, Tensor) {
        let z = self.value(saved.z);
        let (n, width) = (z.rows(), z.cols());
        let heads = saved.heads;
        let f = width / heads;
        let zv = z.values();
        let src = self.value(saved.a_src).values();
        let dst = self.value(saved.a_dst).values();
        let gv = g.values();
        let graph = &saved.graph;

        let mut gz = vec![0.0; n * width];
        let mut gsrc = vec![0.0; heads * f];
        let mut gdst = vec![0.0; heads * f];
        let mut ds = vec![0.0; n * heads];
        let mut dt = vec![0.0; n * heads];
        let mut dalpha = Vec::new();

        for i in 0..n {
            let range = graph.edge_range(i);
            for k in 0..heads {
                let gi = &gv[i * width + k * f..i * width + (k + 1) * f];
                dalpha.clear();
                let mut weighted = 0.0;
                for e in range.clone() {
                    let j = graph.neighbors[e];
                    let a = saved.alpha[e * heads + k];
                    let zj = &zv[j * width + k * f..j * width + (k + 1) * f];
                    let da: f64 = gi.iter().zip(zj).map(|(x, y)| x * y).sum();
                    dalpha.push(da);
                    weighted += a * da;
                    // direct path: out_i += alpha_ij z_j
                    for (d, gg) in gz[j * width + k * f..j * width + (k + 1) * f].iter_mut().zip(gi) {
                        *d += a * gg;
                    }
                }
                for (slot, e) in range.clone().enumerate() {
                    let j = graph.neighbors[e];
                    let a = saved.alpha[e * heads + k];
                    let de = a * (dalpha[slot] - weighted);
                    let u = saved.pre[e * heads + k];
                    let du = if u > 0.0 { de } else { de * saved.slope };
                    ds[i * heads + k] += du;
                    dt[j * heads + k] += du;
                }
            }
        }
        for i in 0..n {
            for k in 0..heads {
                let block = i * width + k * f..i * width + (k + 1) * f;
                let (dsi, dti) = (ds[i * heads + k], dt[i * heads + k]);
                if dsi == 0.0 && dti == 0.0 {
                    continue;
                }
                for (off, zi) in zv[block.clone()].iter().enumerate() {
                    gdst[k * f + off] += dsi * zi;
                    gsrc[k * f + off] += dti * zi;
                }
                for (off, d) in gz[block].iter_mut().enumerate() {
                    *d += dsi * dst[k * f + off] + dti * src[k * f + off];
                }
            }
        }
        (
            Tensor::new(vec![n, width], gz).expect("shape"),
            Tensor::new(vec![heads, f], gsrc).expect("shape"),
            Tensor::new(vec![heads, f], gdst).expect("shape"),
        )
    }
}
