//! Reverse-mode automatic differentiation over a fixed operation set.
//!
//! A [`Graph`] is a Wengert tape of 2-D tensor nodes. Forward methods append
//! nodes; [`Graph::backward`] walks the tape once in reverse creation order
//! (reverse topological order by construction) and accumulates gradients.
//! The op set is closed on purpose: the architecture needs about a dozen
//! primitives and a closed set keeps gradient verification exhaustive.
//!
//! Reductions use a fixed summation order, so seeded runs are bit-reproducible.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(u32);

impl NodeId {
    #[inline]
    fn idx(self) -> usize {
        self.0 as usize
    }
}

/// Variance floor used by layer normalization. A layer-norm of an exactly
/// zero vector therefore returns zeros pre-affine (the affine bias after it),
/// which the memory null-dynamics behavior relies on.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, S),
    AddScalar(NodeId, S),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    /// `[m,n] + [1,n]`, the row vector added to every row.
    AddRowVec(NodeId, NodeId),
    /// `[m,n] + [m,1]`, entry `i` added to all of row `i`.
    AddColVec(NodeId, NodeId),
    /// `[m,n] * [1,n]` columnwise.
    MulRowVec(NodeId, NodeId),
    /// `[m,n] * [m,1]` rowwise.
    MulColVec(NodeId, NodeId),
    /// Row-wise softmax.
    Softmax(NodeId),
    /// Row-wise normalization to zero mean / unit variance (pre-affine).
    LayerNorm(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sigmoid(NodeId),
    Silu(NodeId),
    Softplus(NodeId),
    Abs(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows(NodeId, usize, usize),
    SliceCols(NodeId, usize, usize),
    Sum(NodeId),
    Reshape(NodeId),
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Wengert tape. One graph per training step / evaluation call.
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.idx()].value
    }

    pub fn rows(&self, id: NodeId) -> usize {
        self.value(id).rows
    }

    pub fn cols(&self, id: NodeId) -> usize {
        self.value(id).cols
    }

    /// Gradient of the last `backward` target with respect to `id`.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.grads.get(id.idx()).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node { value, op, needs_grad });
        id
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.idx()].needs_grad
    }

    /// Constant leaf: no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<S>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf: gradients are accumulated for it.
    pub fn param(&mut self, value: Tensor<S>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: NodeId, c: S) -> NodeId {
        let v = self.value(a).map(|x| x * c);
        let ng = self.needs(a);
        self.push(v, Op::Scale(a, c), ng)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: S) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        let ng = self.needs(a);
        self.push(v, Op::AddScalar(a, c), ng)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.scale(a, -S::one())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::Matmul(a, b), ng)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        let ng = self.needs(a);
        self.push(v, Op::Transpose(a), ng)
    }

    pub fn add_row_vec(&mut self, a: NodeId, v: NodeId) -> NodeId {
        let (m, n) = (self.rows(a), self.cols(a));
        assert_eq!(self.rows(v), 1, "add_row_vec expects a 1xN vector");
        assert_eq!(self.cols(v), n, "add_row_vec width mismatch");
        let mut out = self.value(a).clone();
        let vv = &self.nodes[v.idx()].value.data;
        for r in 0..m {
            for c in 0..n {
                out.data[r * n + c] = out.data[r * n + c] + vv[c];
            }
        }
        let ng = self.needs(a) || self.needs(v);
        self.push(out, Op::AddRowVec(a, v), ng)
    }

    pub fn add_col_vec(&mut self, a: NodeId, v: NodeId) -> NodeId {
        let (m, n) = (self.rows(a), self.cols(a));
        assert_eq!(self.cols(v), 1, "add_col_vec expects an Mx1 vector");
        assert_eq!(self.rows(v), m, "add_col_vec height mismatch");
        let mut out = self.value(a).clone();
        let vv = &self.nodes[v.idx()].value.data;
        for r in 0..m {
            for c in 0..n {
                out.data[r * n + c] = out.data[r * n + c] + vv[r];
            }
        }
        let ng = self.needs(a) || self.needs(v);
        self.push(out, Op::AddColVec(a, v), ng)
    }

    pub fn mul_row_vec(&mut self, a: NodeId, v: NodeId) -> NodeId {
        let (m, n) = (self.rows(a), self.cols(a));
        assert_eq!((self.rows(v), self.cols(v)), (1, n), "mul_row_vec shape mismatch");
        let mut out = self.value(a).clone();
        let vv = &self.nodes[v.idx()].value.data;
        for r in 0..m {
            for c in 0..n {
                out.data[r * n + c] = out.data[r * n + c] * vv[c];
            }
        }
        let ng = self.needs(a) || self.needs(v);
        self.push(out, Op::MulRowVec(a, v), ng)
    }

    pub fn mul_col_vec(&mut self, a: NodeId, v: NodeId) -> NodeId {
        let (m, n) = (self.rows(a), self.cols(a));
        assert_eq!((self.rows(v), self.cols(v)), (m, 1), "mul_col_vec shape mismatch");
        let mut out = self.value(a).clone();
        let vv = &self.nodes[v.idx()].value.data;
        for r in 0..m {
            for c in 0..n {
                out.data[r * n + c] = out.data[r * n + c] * vv[r];
            }
        }
        let ng = self.needs(a) || self.needs(v);
        self.push(out, Op::MulColVec(a, v), ng)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let (m, n) = (x.rows, x.cols);
        let mut out = Tensor::zeros(m, n);
        for r in 0..m {
            let row = x.row_slice(r);
            let mx = row.iter().fold(S::neg_infinity(), |acc, &v| acc.max(v));
            let mut z = S::zero();
            for c in 0..n {
                let e = (row[c] - mx).exp();
                out.data[r * n + c] = e;
                z = z + e;
            }
            for c in 0..n {
                out.data[r * n + c] = out.data[r * n + c] / z;
            }
        }
        let ng = self.needs(a);
        self.push(out, Op::Softmax(a), ng)
    }

    /// Row-wise zero-mean / unit-variance normalization, pre-affine.
    pub fn layer_norm(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let (m, n) = (x.rows, x.cols);
        let eps = S::from_f64(LAYER_NORM_EPS);
        let inv_n = S::one() / S::from_f64(n as f64);
        let mut out = Tensor::zeros(m, n);
        for r in 0..m {
            let row = x.row_slice(r);
            let mut mean = S::zero();
            for &v in row {
                mean = mean + v;
            }
            mean = mean * inv_n;
            let mut var = S::zero();
            for &v in row {
                let d = v - mean;
                var = var + d * d;
            }
            var = var * inv_n;
            let inv_std = S::one() / (var + eps).sqrt();
            for c in 0..n {
                out.data[r * n + c] = (row[c] - mean) * inv_std;
            }
        }
        let ng = self.needs(a);
        self.push(out, Op::LayerNorm(a), ng)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.exp());
        let ng = self.needs(a);
        self.push(v, Op::Exp(a), ng)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.ln());
        let ng = self.needs(a);
        self.push(v, Op::Log(a), ng)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        let ng = self.needs(a);
        self.push(v, Op::Sigmoid(a), ng)
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * sigmoid(x));
        let ng = self.needs(a);
        self.push(v, Op::Silu(a), ng)
    }

    /// Numerically guarded softplus `ln(1+e^x)`.
    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(softplus);
        let ng = self.needs(a);
        self.push(v, Op::Softplus(a), ng)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.abs());
        let ng = self.needs(a);
        self.push(v, Op::Abs(a), ng)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let cols = self.cols(parts[0]);
        let rows: usize = parts.iter().map(|&p| self.rows(p)).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            assert_eq!(self.cols(p), cols, "concat_rows width mismatch");
            data.extend_from_slice(&self.nodes[p.idx()].value.data);
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Tensor::new(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.rows(parts[0]);
        let cols: usize = parts.iter().map(|&p| self.cols(p)).sum();
        let mut data = vec![S::zero(); rows * cols];
        let mut offset = 0;
        for &p in parts {
            assert_eq!(self.rows(p), rows, "concat_cols height mismatch");
            let pc = self.cols(p);
            let pv = &self.nodes[p.idx()].value;
            for r in 0..rows {
                data[r * cols + offset..r * cols + offset + pc].copy_from_slice(pv.row_slice(r));
            }
            offset += pc;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Tensor::new(rows, cols, data), Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let x = self.value(a);
        assert!(start + len <= x.rows, "slice_rows out of range");
        let n = x.cols;
        let data = x.data[start * n..(start + len) * n].to_vec();
        let ng = self.needs(a);
        self.push(Tensor::new(len, n, data), Op::SliceRows(a, start, len), ng)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let x = self.value(a);
        assert!(start + len <= x.cols, "slice_cols out of range");
        let (m, n) = (x.rows, x.cols);
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&x.data[r * n + start..r * n + start + len]);
        }
        let ng = self.needs(a);
        self.push(Tensor::new(m, len, data), Op::SliceCols(a, start, len), ng)
    }

    pub fn row(&mut self, a: NodeId, r: usize) -> NodeId {
        self.slice_rows(a, r, 1)
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(v, Op::Sum(a), ng)
    }

    /// Mean of all entries, as a 1x1 node.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).numel();
        let s = self.sum(a);
        self.scale(s, S::one() / S::from_f64(n as f64))
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let x = self.value(a);
        assert_eq!(x.numel(), rows * cols, "reshape numel mismatch");
        let v = Tensor::new(rows, cols, x.data.clone());
        let ng = self.needs(a);
        self.push(v, Op::Reshape(a), ng)
    }

    fn accumulate(&mut self, id: NodeId, g: Tensor<S>) {
        if !self.nodes[id.idx()].needs_grad {
            return;
        }
        match &mut self.grads[id.idx()] {
            Some(existing) => {
                for (e, v) in existing.data.iter_mut().zip(g.data) {
                    *e = *e + v;
                }
            }
            slot => *slot = Some(g),
        }
    }

    /// Reverse pass from a scalar node. Gradients of shared subexpressions
    /// accumulate. Only ancestors of trainable leaves are visited.
    pub fn backward(&mut self, loss: NodeId) {
        assert_eq!(
            (self.rows(loss), self.cols(loss)),
            (1, 1),
            "backward target must be a scalar node"
        );
        self.grads.clear();
        self.grads.resize(self.nodes.len(), None);
        if !self.nodes[loss.idx()].needs_grad {
            return;
        }
        self.grads[loss.idx()] = Some(Tensor::scalar(S::one()));

        for i in (0..=loss.idx()).rev() {
            if self.grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = self.grads[i].clone().expect("checked above");
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accumulate(a, g.clone());
                    self.accumulate(b, g);
                }
                Op::Sub(a, b) => {
                    self.accumulate(a, g.clone());
                    self.accumulate(b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let ga = g.zip(self.value(b), |gg, bb| gg * bb);
                    let gb = g.zip(self.value(a), |gg, aa| gg * aa);
                    self.accumulate(a, ga);
                    self.accumulate(b, gb);
                }
                Op::Scale(a, c) => {
                    self.accumulate(a, g.map(|x| x * c));
                }
                Op::AddScalar(a, _) => {
                    self.accumulate(a, g);
                }
                Op::Matmul(a, b) => {
                    if self.needs(a) {
                        let bt = self.value(b).transpose();
                        self.accumulate(a, g.matmul(&bt));
                    }
                    if self.needs(b) {
                        let at = self.value(a).transpose();
                        self.accumulate(b, at.matmul(&g));
                    }
                }
                Op::Transpose(a) => {
                    self.accumulate(a, g.transpose());
                }
                Op::AddRowVec(a, v) => {
                    if self.needs(v) {
                        let (m, n) = (g.rows, g.cols);
                        let mut gv = Tensor::zeros(1, n);
                        for r in 0..m {
                            for c in 0..n {
                                gv.data[c] = gv.data[c] + g.data[r * n + c];
                            }
                        }
                        self.accumulate(v, gv);
                    }
                    self.accumulate(a, g);
                }
                Op::AddColVec(a, v) => {
                    if self.needs(v) {
                        let (m, n) = (g.rows, g.cols);
                        let mut gv = Tensor::zeros(m, 1);
                        for r in 0..m {
                            for c in 0..n {
                                gv.data[r] = gv.data[r] + g.data[r * n + c];
                            }
                        }
                        self.accumulate(v, gv);
                    }
                    self.accumulate(a, g);
                }
                Op::MulRowVec(a, v) => {
                    let (m, n) = (g.rows, g.cols);
                    if self.needs(v) {
                        let av = self.value(a);
                        let mut gv = Tensor::zeros(1, n);
                        for r in 0..m {
                            for c in 0..n {
                                gv.data[c] = gv.data[c] + g.data[r * n + c] * av.data[r * n + c];
                            }
                        }
                        self.accumulate(v, gv);
                    }
                    if self.needs(a) {
                        let vv = self.value(v).clone();
                        let mut ga = g.clone();
                        for r in 0..m {
                            for c in 0..n {
                                ga.data[r * n + c] = ga.data[r * n + c] * vv.data[c];
                            }
                        }
                        self.accumulate(a, ga);
                    }
                }
                Op::MulColVec(a, v) => {
                    let (m, n) = (g.rows, g.cols);
                    if self.needs(v) {
                        let av = self.value(a);
                        let mut gv = Tensor::zeros(m, 1);
                        for r in 0..m {
                            for c in 0..n {
                                gv.data[r] = gv.data[r] + g.data[r * n + c] * av.data[r * n + c];
                            }
                        }
                        self.accumulate(v, gv);
                    }
                    if self.needs(a) {
                        let vv = self.value(v).clone();
                        let mut ga = g.clone();
                        for r in 0..m {
                            for c in 0..n {
                                ga.data[r * n + c] = ga.data[r * n + c] * vv.data[r];
                            }
                        }
                        self.accumulate(a, ga);
                    }
                }
                Op::Softmax(a) => {
                    let y = &self.nodes[i].value;
                    let (m, n) = (y.rows, y.cols);
                    let mut ga = Tensor::zeros(m, n);
                    for r in 0..m {
                        let mut dot = S::zero();
                        for c in 0..n {
                            dot = dot + g.data[r * n + c] * y.data[r * n + c];
                        }
                        for c in 0..n {
                            ga.data[r * n + c] = y.data[r * n + c] * (g.data[r * n + c] - dot);
                        }
                    }
                    self.accumulate(a, ga);
                }
                Op::LayerNorm(a) => {
                    let y = self.nodes[i].value.clone();
                    let x = self.value(a);
                    let (m, n) = (y.rows, y.cols);
                    let eps = S::from_f64(LAYER_NORM_EPS);
                    let inv_n = S::one() / S::from_f64(n as f64);
                    let mut ga = Tensor::zeros(m, n);
                    for r in 0..m {
                        let row = x.row_slice(r);
                        let mut mean = S::zero();
                        for &v in row {
                            mean = mean + v;
                        }
                        mean = mean * inv_n;
                        let mut var = S::zero();
                        for &v in row {
                            let d = v - mean;
                            var = var + d * d;
                        }
                        var = var * inv_n;
                        let inv_std = S::one() / (var + eps).sqrt();
                        let mut g_mean = S::zero();
                        let mut gy_mean = S::zero();
                        for c in 0..n {
                            g_mean = g_mean + g.data[r * n + c];
                            gy_mean = gy_mean + g.data[r * n + c] * y.data[r * n + c];
                        }
                        g_mean = g_mean * inv_n;
                        gy_mean = gy_mean * inv_n;
                        for c in 0..n {
                            ga.data[r * n + c] =
                                inv_std * (g.data[r * n + c] - g_mean - y.data[r * n + c] * gy_mean);
                        }
                    }
                    self.accumulate(a, ga);
                }
                Op::Exp(a) => {
                    let y = &self.nodes[i].value;
                    self.accumulate(a, g.zip(y, |gg, yy| gg * yy));
                }
                Op::Log(a) => {
                    let x = self.value(a);
                    self.accumulate(a, g.zip(x, |gg, xx| gg / xx));
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[i].value;
                    self.accumulate(a, g.zip(y, |gg, yy| gg * yy * (S::one() - yy)));
                }
                Op::Silu(a) => {
                    let x = self.value(a);
                    let ga = g.zip(x, |gg, xx| {
                        let s = sigmoid(xx);
                        gg * (s + xx * s * (S::one() - s))
                    });
                    self.accumulate(a, ga);
                }
                Op::Softplus(a) => {
                    let x = self.value(a);
                    self.accumulate(a, g.zip(x, |gg, xx| gg * sigmoid(xx)));
                }
                Op::Abs(a) => {
                    let x = self.value(a);
                    let ga = g.zip(x, |gg, xx| {
                        if xx > S::zero() {
                            gg
                        } else if xx < S::zero() {
                            -gg
                        } else {
                            S::zero()
                        }
                    });
                    self.accumulate(a, ga);
                }
                Op::ConcatRows(parts) => {
                    let cols = g.cols;
                    let mut start = 0;
                    for p in parts {
                        let pr = self.rows(p);
                        let slice =
                            Tensor::new(pr, cols, g.data[start * cols..(start + pr) * cols].to_vec());
                        self.accumulate(p, slice);
                        start += pr;
                    }
                }
                Op::ConcatCols(parts) => {
                    let (m, cols) = (g.rows, g.cols);
                    let mut offset = 0;
                    for p in parts {
                        let pc = self.cols(p);
                        let mut slice = Tensor::zeros(m, pc);
                        for r in 0..m {
                            slice.data[r * pc..(r + 1) * pc]
                                .copy_from_slice(&g.data[r * cols + offset..r * cols + offset + pc]);
                        }
                        self.accumulate(p, slice);
                        offset += pc;
                    }
                }
                Op::SliceRows(a, start, len) => {
                    let (ar, ac) = (self.rows(a), self.cols(a));
                    let mut ga = Tensor::zeros(ar, ac);
                    ga.data[start * ac..(start + len) * ac].copy_from_slice(&g.data);
                    self.accumulate(a, ga);
                }
                Op::SliceCols(a, start, len) => {
                    let (ar, ac) = (self.rows(a), self.cols(a));
                    let mut ga = Tensor::zeros(ar, ac);
                    for r in 0..ar {
                        ga.data[r * ac + start..r * ac + start + len]
                            .copy_from_slice(&g.data[r * len..(r + 1) * len]);
                    }
                    self.accumulate(a, ga);
                }
                Op::Sum(a) => {
                    let (ar, ac) = (self.rows(a), self.cols(a));
                    let gs = g.data[0];
                    self.accumulate(a, Tensor::full(ar, ac, gs));
                }
                Op::Reshape(a) => {
                    let (ar, ac) = (self.rows(a), self.cols(a));
                    self.accumulate(a, Tensor::new(ar, ac, g.data.clone()));
                }
            }
        }
    }
}

#[inline]
fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[inline]
fn softplus<S: Scalar>(x: S) -> S {
    let cap = S::from_f64(30.0);
    if x > cap {
        x
    } else {
        (S::one() + x.exp()).ln()
    }
}
