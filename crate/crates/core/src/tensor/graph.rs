//! Define-by-run compute graph with reverse-mode differentiation.
//!
//! Forward values are computed eagerly as nodes are appended, so the tape is
//! always topologically ordered and `backward` is a single reverse sweep that
//! visits each node exactly once. Shape violations are programming errors and
//! panic with a description; numeric error states (non-finite loss) surface as
//! [`TensorError`].

use std::collections::BTreeMap;

use super::store::{ParamId, ParamStore};
use super::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor, TensorError};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<ParamId> },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Adds a length-c row vector to every row of an r×c matrix.
    AddRow { matrix: NodeId, row: NodeId },
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    SoftmaxRows(NodeId),
    LayerNorm { input: NodeId, gain: NodeId, bias: NodeId, eps: f64 },
    Gelu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    /// Gathers rows of `source` in the given order (rows may repeat).
    SelectRows { source: NodeId, indices: Vec<usize> },
    SliceCols { source: NodeId, start: usize, end: usize },
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    /// Elementwise sum of same-shaped inputs.
    AddN(Vec<NodeId>),
    /// Sum of all elements, producing a scalar.
    Sum(NodeId),
    /// Mean over rows of softmax cross-entropy against target rows.
    CrossEntropy { logits: NodeId, target: NodeId },
    /// Mean over all entries of sigmoid binary cross-entropy.
    MultiLabelLoss { logits: NodeId, targets: NodeId },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Per-parameter gradients produced by [`Graph::backward`].
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.by_param.iter().map(|(id, t)| (*id, t))
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    /// Largest absolute gradient entry; useful for divergence diagnostics.
    pub fn max_abs(&self) -> f64 {
        self.by_param
            .values()
            .flat_map(|t| t.data().iter())
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    /// Accumulates `other` into `self` elementwise. Parameters present only
    /// in `other` are inserted. Accumulation order is whatever order the
    /// caller invokes this in, so callers that need determinism must fix it.
    pub fn add_assign(&mut self, other: &Gradients) {
        for (id, tensor) in other.iter() {
            match self.by_param.get_mut(&id) {
                Some(existing) => {
                    debug_assert_eq!(existing.shape(), tensor.shape());
                    for (a, b) in existing.data_mut().iter_mut().zip(tensor.data()) {
                        *a += b;
                    }
                }
                None => {
                    self.by_param.insert(id, tensor.clone());
                }
            }
        }
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: BTreeMap<usize, NodeId>,
}

const GELU_COEF: f64 = 0.044_715;

fn gelu_scalar(x: f64) -> f64 {
    let u = (2.0 / std::f64::consts::PI).sqrt() * (x + GELU_COEF * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let u = c * (x + GELU_COEF * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * GELU_COEF * x * x)
}

/// Row-wise softmax with max-subtraction stabilization.
pub(crate) fn softmax_rows_value(input: &Tensor) -> Tensor {
    let (r, c) = (input.rows(), input.cols());
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = input.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dst = &mut out[i * c..(i + 1) * c];
        let mut sum = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - m).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    Tensor::from_vec(input.shape(), out).expect("softmax preserves shape")
}

/// Log-sum-exp of a slice, max-stabilized.
fn logsumexp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    /// Constant leaf; receives no parameter gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf { param: None }, value)
    }

    /// Parameter leaf. Memoized so that each parameter appears on the tape at
    /// most once, which makes gradient accumulation across uses automatic.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id.index()) {
            return node;
        }
        let node = self.push(Op::Leaf { param: Some(id) }, store.get(id).clone());
        self.param_nodes.insert(id.index(), node);
        node
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(ta.shape(), tb.shape(), "add: shapes differ");
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_vec(ta.shape(), data).unwrap();
        self.push(Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(ta.shape(), tb.shape(), "sub: shapes differ");
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let value = Tensor::from_vec(ta.shape(), data).unwrap();
        self.push(Op::Sub(a, b), value)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(ta.shape(), tb.shape(), "mul: shapes differ");
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::from_vec(ta.shape(), data).unwrap();
        self.push(Op::Mul(a, b), value)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let ta = &self.nodes[a.0].value;
        let data = ta.data().iter().map(|x| x * factor).collect();
        let value = Tensor::from_vec(ta.shape(), data).unwrap();
        self.push(Op::Scale(a, factor), value)
    }

    /// matrix[r×c] + row broadcast down the rows; `row` may be shaped [c] or [1×c].
    pub fn add_row(&mut self, matrix: NodeId, row: NodeId) -> NodeId {
        let (tm, tr) = (&self.nodes[matrix.0].value, &self.nodes[row.0].value);
        let c = tm.cols();
        assert_eq!(tr.numel(), c, "add_row: row length {} vs {} cols", tr.numel(), c);
        let mut data = tm.data().to_vec();
        for chunk in data.chunks_mut(c) {
            for (d, &r) in chunk.iter_mut().zip(tr.data()) {
                *d += r;
            }
        }
        let value = Tensor::from_vec(tm.shape(), data).unwrap();
        self.push(Op::AddRow { matrix, row }, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = (ta.rows(), ta.cols());
        let (k2, n) = (tb.rows(), tb.cols());
        assert_eq!(k, k2, "matmul: inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        matmul_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let value = Tensor::from_vec(&[m, n], out).unwrap();
        self.push(Op::MatMul(a, b), value)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let ta = &self.nodes[a.0].value;
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = ta.get2(i, j);
            }
        }
        let value = Tensor::from_vec(&[c, r], out).unwrap();
        self.push(Op::Transpose(a), value)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        // Non-finite inputs flow through as NaN so callers can surface them
        // as divergence at the loss boundary instead of aborting mid-graph.
        let value = softmax_rows_value(&self.nodes[a.0].value);
        self.push(Op::SoftmaxRows(a), value)
    }

    /// Per-row standardization followed by an affine map with `gain`/`bias`
    /// (each of the row length). `eps` guards the zero-variance case.
    pub fn layer_norm(&mut self, input: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> NodeId {
        let (ti, tg, tb) =
            (&self.nodes[input.0].value, &self.nodes[gain.0].value, &self.nodes[bias.0].value);
        let (r, c) = (ti.rows(), ti.cols());
        assert_eq!(tg.numel(), c, "layer_norm: gain length");
        assert_eq!(tb.numel(), c, "layer_norm: bias length");
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = ti.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                out[i * c + j] = (row[j] - mean) * inv * tg.data()[j] + tb.data()[j];
            }
        }
        let value = Tensor::from_vec(ti.shape(), out).unwrap();
        self.push(Op::LayerNorm { input, gain, bias, eps }, value)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let ta = &self.nodes[a.0].value;
        let data = ta.data().iter().map(|&x| gelu_scalar(x)).collect();
        let value = Tensor::from_vec(ta.shape(), data).unwrap();
        self.push(Op::Gelu(a), value)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let ta = &self.nodes[a.0].value;
        let data = ta.data().iter().map(|x| x.tanh()).collect();
        let value = Tensor::from_vec(ta.shape(), data).unwrap();
        self.push(Op::Tanh(a), value)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let ta = &self.nodes[a.0].value;
        let data = ta.data().iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
        let value = Tensor::from_vec(ta.shape(), data).unwrap();
        self.push(Op::Sigmoid(a), value)
    }

    /// Gather rows of a matrix; indices may repeat, and gradients accumulate
    /// back into the shared source rows.
    pub fn select_rows(&mut self, source: NodeId, indices: &[usize]) -> NodeId {
        let ts = &self.nodes[source.0].value;
        let (r, c) = (ts.rows(), ts.cols());
        let mut out = Vec::with_capacity(indices.len() * c);
        for &idx in indices {
            assert!(idx < r, "select_rows: index {idx} out of {r}");
            out.extend_from_slice(ts.row(idx));
        }
        let value = Tensor::from_vec(&[indices.len(), c], out).unwrap();
        self.push(Op::SelectRows { source, indices: indices.to_vec() }, value)
    }

    /// Columns `[start, end)` of every row.
    pub fn slice_cols(&mut self, source: NodeId, start: usize, end: usize) -> NodeId {
        let ts = &self.nodes[source.0].value;
        let (r, c) = (ts.rows(), ts.cols());
        assert!(start < end && end <= c, "slice_cols: [{start},{end}) of {c}");
        let mut out = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            out.extend_from_slice(&ts.row(i)[start..end]);
        }
        let value = Tensor::from_vec(&[r, end - start], out).unwrap();
        self.push(Op::SliceCols { source, start, end }, value)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_rows: empty input");
        let c = self.nodes[parts[0].0].value.cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = &self.nodes[p.0].value;
            assert_eq!(t.cols(), c, "concat_rows: column mismatch");
            rows += t.rows();
            out.extend_from_slice(t.data());
        }
        let value = Tensor::from_vec(&[rows, c], out).unwrap();
        self.push(Op::ConcatRows(parts.to_vec()), value)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_cols: empty input");
        let r = self.nodes[parts[0].0].value.rows();
        let total: usize = parts.iter().map(|&p| self.nodes[p.0].value.cols()).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                let t = &self.nodes[p.0].value;
                assert_eq!(t.rows(), r, "concat_cols: row mismatch");
                out.extend_from_slice(t.row(i));
            }
        }
        let value = Tensor::from_vec(&[r, total], out).unwrap();
        self.push(Op::ConcatCols(parts.to_vec()), value)
    }

    pub fn add_n(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "add_n: empty input");
        let shape = self.nodes[parts[0].0].value.shape().to_vec();
        let mut data = vec![0.0; self.nodes[parts[0].0].value.numel()];
        for &p in parts {
            let t = &self.nodes[p.0].value;
            assert_eq!(t.shape(), &shape[..], "add_n: shape mismatch");
            for (d, &v) in data.iter_mut().zip(t.data()) {
                *d += v;
            }
        }
        let value = Tensor::from_vec(&shape, data).unwrap();
        self.push(Op::AddN(parts.to_vec()), value)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total: f64 = self.nodes[a.0].value.data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(total))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a.0].value.numel();
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Softmax cross-entropy, −Σ target·log softmax(logits), averaged over
    /// rows. For a single row this is exactly the vector form. Each target row
    /// must be a probability distribution.
    pub fn cross_entropy(&mut self, logits: NodeId, target: NodeId) -> NodeId {
        let (tl, tt) = (&self.nodes[logits.0].value, &self.nodes[target.0].value);
        assert_eq!(tl.shape(), tt.shape(), "cross_entropy: shapes differ");
        let (r, c) = (tl.rows(), tl.cols());
        let mut total = 0.0;
        for i in 0..r {
            let (lrow, trow) = (tl.row(i), tt.row(i));
            let sum: f64 = trow.iter().sum();
            let min = trow.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(
                (sum - 1.0).abs() < 1e-6 && min >= 0.0,
                "cross_entropy: target row {i} is not a distribution (sum {sum}, min {min})"
            );
            let lse = logsumexp(lrow);
            let dot: f64 = lrow.iter().zip(trow).map(|(z, y)| z * y).sum();
            total += lse - dot;
        }
        let _ = c;
        // Non-finite logits yield a non-finite loss; callers treat that as
        // divergence rather than a programming error, so no assert here.
        let value = Tensor::scalar(total / r as f64);
        self.push(Op::CrossEntropy { logits, target }, value)
    }

    /// Sigmoid binary cross-entropy between logits and {0,1} targets, averaged
    /// over every entry. Stable form: max(z,0) − z·y + ln(1+exp(−|z|)).
    pub fn multi_label_loss(&mut self, logits: NodeId, targets: NodeId) -> NodeId {
        let (tl, tt) = (&self.nodes[logits.0].value, &self.nodes[targets.0].value);
        assert_eq!(tl.shape(), tt.shape(), "multi_label_loss: shapes differ");
        let mut total = 0.0;
        for (&z, &y) in tl.data().iter().zip(tt.data()) {
            debug_assert!((0.0..=1.0).contains(&y), "multi_label_loss: target outside [0,1]");
            total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        }
        let value = Tensor::scalar(total / tl.numel() as f64);
        self.push(Op::MultiLabelLoss { logits, targets }, value)
    }

    /// Softmax(q·kᵀ/√d_k)·v. An optional additive mask (same shape as the
    /// score matrix, typically 0 or −1e9) is applied before the softmax so
    /// padded keys receive zero weight.
    pub fn scaled_dot_attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        mask: Option<NodeId>,
    ) -> NodeId {
        let d_k = self.nodes[q.0].value.cols();
        assert_eq!(d_k, self.nodes[k.0].value.cols(), "attention: q/k width mismatch");
        assert_eq!(
            self.nodes[k.0].value.rows(),
            self.nodes[v.0].value.rows(),
            "attention: k/v length mismatch"
        );
        let kt = self.transpose(k);
        let scores = self.matmul(q, kt);
        let scaled = self.scale(scores, 1.0 / (d_k as f64).sqrt());
        let masked = match mask {
            Some(m) => self.add(scaled, m),
            None => scaled,
        };
        let weights = self.softmax_rows(masked);
        self.matmul(weights, v)
    }

    /// Reverse sweep from a scalar loss; returns gradients for every parameter
    /// leaf reachable from it.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, TensorError> {
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(TensorError::NotAScalar { shape: loss_value.shape().to_vec() });
        }
        if !loss_value.scalar_value().is_finite() {
            return Err(TensorError::NonFinite { context: "backward loss" });
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.accumulate(idx, &g, &mut grads);
            // Leaves keep their gradient for parameter extraction.
            if matches!(self.nodes[idx].op, Op::Leaf { .. }) {
                grads[idx] = Some(g);
            }
        }

        let mut by_param = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(pid) } = node.op {
                if let Some(g) = grads[idx].take() {
                    by_param.insert(pid, Tensor::from_vec(node.value.shape(), g).unwrap());
                }
            }
        }
        Ok(Gradients { by_param })
    }

    fn grad_buf<'a>(
        grads: &'a mut [Option<Vec<f64>>],
        id: NodeId,
        numel: usize,
    ) -> &'a mut Vec<f64> {
        grads[id.0].get_or_insert_with(|| vec![0.0; numel])
    }

    /// Propagates the output gradient `g` of node `idx` into its inputs.
    fn accumulate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                for (d, &gv) in Self::grad_buf(grads, *a, g.len()).iter_mut().zip(g) {
                    *d += gv;
                }
                for (d, &gv) in Self::grad_buf(grads, *b, g.len()).iter_mut().zip(g) {
                    *d += gv;
                }
            }
            Op::Sub(a, b) => {
                for (d, &gv) in Self::grad_buf(grads, *a, g.len()).iter_mut().zip(g) {
                    *d += gv;
                }
                for (d, &gv) in Self::grad_buf(grads, *b, g.len()).iter_mut().zip(g) {
                    *d -= gv;
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.nodes[a.0].value.data().to_vec(), self.nodes[b.0].value.data().to_vec());
                for ((d, &gv), &bv) in
                    Self::grad_buf(grads, *a, g.len()).iter_mut().zip(g).zip(&vb)
                {
                    *d += gv * bv;
                }
                for ((d, &gv), &av) in
                    Self::grad_buf(grads, *b, g.len()).iter_mut().zip(g).zip(&va)
                {
                    *d += gv * av;
                }
            }
            Op::Scale(a, factor) => {
                for (d, &gv) in Self::grad_buf(grads, *a, g.len()).iter_mut().zip(g) {
                    *d += gv * factor;
                }
            }
            Op::AddRow { matrix, row } => {
                let c = self.nodes[row.0].value.numel();
                for (d, &gv) in Self::grad_buf(grads, *matrix, g.len()).iter_mut().zip(g) {
                    *d += gv;
                }
                let rbuf = Self::grad_buf(grads, *row, c);
                for chunk in g.chunks(c) {
                    for (d, &gv) in rbuf.iter_mut().zip(chunk) {
                        *d += gv;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                let (adata, bdata) = (ta.data().to_vec(), tb.data().to_vec());
                // dA += G·Bᵀ
                matmul_nt_acc(g, &bdata, Self::grad_buf(grads, *a, m * k), m, n, k);
                // dB += Aᵀ·G
                matmul_tn_acc(&adata, g, Self::grad_buf(grads, *b, k * n), m, k, n);
            }
            Op::Transpose(a) => {
                let ta = &self.nodes[a.0].value;
                let (r, c) = (ta.rows(), ta.cols());
                let buf = Self::grad_buf(grads, *a, r * c);
                for i in 0..c {
                    for j in 0..r {
                        buf[j * c + i] += g[i * r + j];
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let s = &node.value;
                let (r, c) = (s.rows(), s.cols());
                let buf = Self::grad_buf(grads, *a, r * c);
                for i in 0..r {
                    let srow = s.row(i);
                    let grow = &g[i * c..(i + 1) * c];
                    let dot: f64 = srow.iter().zip(grow).map(|(sv, gv)| sv * gv).sum();
                    for j in 0..c {
                        buf[i * c + j] += srow[j] * (grow[j] - dot);
                    }
                }
            }
            Op::LayerNorm { input, gain, bias, eps } => {
                let ti = &self.nodes[input.0].value;
                let tg = &self.nodes[gain.0].value;
                let (r, c) = (ti.rows(), ti.cols());
                let mut din = vec![0.0; r * c];
                let mut dgain = vec![0.0; c];
                let mut dbias = vec![0.0; c];
                for i in 0..r {
                    let row = ti.row(i);
                    let grow = &g[i * c..(i + 1) * c];
                    let mean = row.iter().sum::<f64>() / c as f64;
                    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                    // gy = upstream ⊙ gain; input grad is the standard
                    // layer-norm backward: inv·(gy − mean(gy) − x̂·mean(gy⊙x̂)).
                    let gy: Vec<f64> =
                        grow.iter().zip(tg.data()).map(|(gv, gn)| gv * gn).collect();
                    let mean_gy = gy.iter().sum::<f64>() / c as f64;
                    let mean_gy_xhat =
                        gy.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for j in 0..c {
                        din[i * c + j] += inv * (gy[j] - mean_gy - xhat[j] * mean_gy_xhat);
                        dgain[j] += grow[j] * xhat[j];
                        dbias[j] += grow[j];
                    }
                }
                for (d, v) in Self::grad_buf(grads, *input, r * c).iter_mut().zip(din) {
                    *d += v;
                }
                for (d, v) in Self::grad_buf(grads, *gain, c).iter_mut().zip(dgain) {
                    *d += v;
                }
                for (d, v) in Self::grad_buf(grads, *bias, c).iter_mut().zip(dbias) {
                    *d += v;
                }
            }
            Op::Gelu(a) => {
                let ta = self.nodes[a.0].value.data().to_vec();
                for ((d, &gv), &x) in
                    Self::grad_buf(grads, *a, g.len()).iter_mut().zip(g).zip(&ta)
                {
                    *d += gv * gelu_grad_scalar(x);
                }
            }
            Op::Tanh(a) => {
                let tv = node.value.data().to_vec();
                for ((d, &gv), &t) in
                    Self::grad_buf(grads, *a, g.len()).iter_mut().zip(g).zip(&tv)
                {
                    *d += gv * (1.0 - t * t);
                }
            }
            Op::Sigmoid(a) => {
                let sv = node.value.data().to_vec();
                for ((d, &gv), &s) in
                    Self::grad_buf(grads, *a, g.len()).iter_mut().zip(g).zip(&sv)
                {
                    *d += gv * s * (1.0 - s);
                }
            }
            Op::SelectRows { source, indices } => {
                let ts = &self.nodes[source.0].value;
                let (r, c) = (ts.rows(), ts.cols());
                let buf = Self::grad_buf(grads, *source, r * c);
                for (out_i, &src_i) in indices.iter().enumerate() {
                    let grow = &g[out_i * c..(out_i + 1) * c];
                    let drow = &mut buf[src_i * c..(src_i + 1) * c];
                    for (d, &gv) in drow.iter_mut().zip(grow) {
                        *d += gv;
                    }
                }
            }
            Op::SliceCols { source, start, end } => {
                let ts = &self.nodes[source.0].value;
                let (r, c) = (ts.rows(), ts.cols());
                let w = end - start;
                let buf = Self::grad_buf(grads, *source, r * c);
                for i in 0..r {
                    for j in 0..w {
                        buf[i * c + start + j] += g[i * w + j];
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.numel();
                    let buf = Self::grad_buf(grads, p, n);
                    for (d, &gv) in buf.iter_mut().zip(&g[offset..offset + n]) {
                        *d += gv;
                    }
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let r = self.nodes[parts[0].0].value.rows();
                let widths: Vec<usize> =
                    parts.iter().map(|&p| self.nodes[p.0].value.cols()).collect();
                let total: usize = widths.iter().sum();
                for (pi, &p) in parts.iter().enumerate() {
                    let w = widths[pi];
                    let before: usize = widths[..pi].iter().sum();
                    let buf = Self::grad_buf(grads, p, r * w);
                    for i in 0..r {
                        for j in 0..w {
                            buf[i * w + j] += g[i * total + before + j];
                        }
                    }
                }
            }
            Op::AddN(parts) => {
                for &p in parts {
                    for (d, &gv) in Self::grad_buf(grads, p, g.len()).iter_mut().zip(g) {
                        *d += gv;
                    }
                }
            }
            Op::Sum(a) => {
                let n = self.nodes[a.0].value.numel();
                let gv = g[0];
                for d in Self::grad_buf(grads, *a, n).iter_mut() {
                    *d += gv;
                }
            }
            Op::CrossEntropy { logits, target } => {
                let tl = &self.nodes[logits.0].value;
                let tt = &self.nodes[target.0].value;
                let (r, c) = (tl.rows(), tl.cols());
                let probs = softmax_rows_value(tl);
                let gv = g[0] / r as f64;
                // d/dz of (lse − Σ y z) is softmax(z) − y; target grad is −z·gv.
                let buf = Self::grad_buf(grads, *logits, r * c);
                for i in 0..r * c {
                    buf[i] += gv * (probs.data()[i] - tt.data()[i]);
                }
                let tlv = tl.data().to_vec();
                let lses: Vec<f64> = (0..r).map(|i| logsumexp(tl.row(i))).collect();
                let tbuf = Self::grad_buf(grads, *target, r * c);
                for i in 0..r {
                    for j in 0..c {
                        tbuf[i * c + j] += gv * (lses[i] - tlv[i * c + j]);
                    }
                }
            }
            Op::MultiLabelLoss { logits, targets } => {
                let tl = &self.nodes[logits.0].value;
                let tt = &self.nodes[targets.0].value;
                let n = tl.numel();
                let gv = g[0] / n as f64;
                let (zl, yl) = (tl.data().to_vec(), tt.data().to_vec());
                let buf = Self::grad_buf(grads, *logits, n);
                for i in 0..n {
                    let s = 1.0 / (1.0 + (-zl[i]).exp());
                    buf[i] += gv * (s - yl[i]);
                }
                let tbuf = Self::grad_buf(grads, *targets, n);
                for i in 0..n {
                    tbuf[i] += gv * (-zl[i]);
                }
            }
        }
    }
}
