//! Define-by-run computation graph.
//!
//! Nodes are appended eagerly: each constructor runs the forward kernel
//! immediately and records what backward needs. Inputs always have smaller
//! ids than their consumers, so reverse id order is a valid backward sweep.

use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvDims, ConvTDims};
use super::{Tensor, TensorError};

/// Handle to a node in a [`Graph`]. Only valid for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

/// Batch-norm hyperparameters. `eps` is kept small so that normalized
/// batches hit unit variance tightly; `momentum` weights the new batch
/// statistic when updating running stats.
#[derive(Debug, Clone, Copy)]
pub struct BnConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        Self { eps: 1e-8, momentum: 0.1 }
    }
}

/// Per-channel running statistics for one batch-norm layer. Updated in
/// train mode, consumed in eval mode, persisted in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnRunning {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnRunning {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// What batch norm saved at forward time: the statistics it normalized
/// with (batch stats in train mode, running stats in eval mode).
struct BnRecord {
    train: bool,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

enum Op {
    Leaf,
    Conv2d { dims: ConvDims },
    ConvTranspose2d { dims: ConvTDims },
    BatchNorm { rec: Box<BnRecord> },
    Relu,
    LeakyRelu { slope: f64 },
    Sigmoid,
    Affine,
    ConcatChannels,
    TileSpatial,
    Add,
    Sub,
    Mul,
    Scale { factor: f64 },
    Log1p,
    WeightedL1,
    SoftmaxCrossEntropy { labels: Vec<usize>, probs: Vec<f64> },
    EmbedRows { indices: Vec<usize> },
    GlobalAvgPool,
    BatchSelectSum { groups: Vec<Vec<usize>> },
    DotConst { r: Vec<f64> },
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`]. Leaves with `requires_grad`
/// always have an entry (exact zeros if they never reached the loss);
/// detached leaves have none.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node { op, inputs, value, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// Insert a value node. Gradients flow into it only if `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { op: Op::Leaf, inputs: vec![], value, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn data(&self, id: NodeId) -> &[f64] {
        self.nodes[id.0].value.data()
    }

    fn expect_rank(
        &self,
        op: &'static str,
        id: NodeId,
        rank: usize,
        what: &str,
    ) -> Result<(), TensorError> {
        if self.shape(id).len() != rank {
            return Err(TensorError::BadShape {
                op,
                expected: format!("{what} of rank {rank}"),
                got: self.shape(id).to_vec(),
            });
        }
        Ok(())
    }

    /// 2-D convolution, NCHW input, OIHW weight, per-output-channel bias.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId, TensorError> {
        self.expect_rank("conv2d", x, 4, "input")?;
        self.expect_rank("conv2d", w, 4, "weight")?;
        self.expect_rank("conv2d", b, 1, "bias")?;
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if ws[1] != xs[1] {
            return Err(TensorError::ShapeMismatch { op: "conv2d", lhs: xs, rhs: ws });
        }
        if self.shape(b)[0] != ws[0] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: ws,
                rhs: self.shape(b).to_vec(),
            });
        }
        if xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[3] {
            return Err(TensorError::BadShape {
                op: "conv2d",
                expected: format!("spatial dims >= kernel {}x{} (pad {pad})", ws[2], ws[3]),
                got: xs,
            });
        }
        let dims = ConvDims {
            n: xs[0],
            cin: xs[1],
            h: xs[2],
            w: xs[3],
            cout: ws[0],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad,
        };
        let mut y = vec![0.0; dims.n * dims.cout * dims.out_h() * dims.out_w()];
        kernels::conv2d_forward(self.data(x), self.data(w), self.data(b), dims, &mut y);
        let value = Tensor::new(vec![dims.n, dims.cout, dims.out_h(), dims.out_w()], y)?;
        Ok(self.push(Op::Conv2d { dims }, vec![x, w, b], value))
    }

    /// Transposed 2-D convolution, NCHW input, IOHW weight.
    pub fn conv_transpose2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId, TensorError> {
        self.expect_rank("conv_transpose2d", x, 4, "input")?;
        self.expect_rank("conv_transpose2d", w, 4, "weight")?;
        self.expect_rank("conv_transpose2d", b, 1, "bias")?;
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if ws[0] != xs[1] {
            return Err(TensorError::ShapeMismatch { op: "conv_transpose2d", lhs: xs, rhs: ws });
        }
        if self.shape(b)[0] != ws[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv_transpose2d",
                lhs: ws,
                rhs: self.shape(b).to_vec(),
            });
        }
        let dims = ConvTDims {
            n: xs[0],
            cin: xs[1],
            h: xs[2],
            w: xs[3],
            cout: ws[1],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad,
        };
        if dims.h * stride + ws[2] <= 2 * pad + stride || dims.w * stride + ws[3] <= 2 * pad + stride
        {
            return Err(TensorError::BadShape {
                op: "conv_transpose2d",
                expected: format!("output dims positive for kernel {}x{} (pad {pad})", ws[2], ws[3]),
                got: xs,
            });
        }
        let mut y = vec![0.0; dims.n * dims.cout * dims.out_h() * dims.out_w()];
        kernels::conv_transpose2d_forward(self.data(x), self.data(w), self.data(b), dims, &mut y);
        let value = Tensor::new(vec![dims.n, dims.cout, dims.out_h(), dims.out_w()], y)?;
        Ok(self.push(Op::ConvTranspose2d { dims }, vec![x, w, b], value))
    }

    /// Batch normalization over an NCHW tensor. In train mode normalizes
    /// with batch statistics and folds them into `running`; in eval mode
    /// normalizes with the running statistics unchanged.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running: &mut BnRunning,
        cfg: BnConfig,
        train: bool,
    ) -> Result<NodeId, TensorError> {
        self.expect_rank("batch_norm", x, 4, "input")?;
        self.expect_rank("batch_norm", gamma, 1, "scale")?;
        self.expect_rank("batch_norm", beta, 1, "shift")?;
        let xs = self.shape(x).to_vec();
        let ch = xs[1];
        if self.shape(gamma)[0] != ch || self.shape(beta)[0] != ch || running.channels() != ch {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm",
                lhs: xs,
                rhs: vec![self.shape(gamma)[0], self.shape(beta)[0], running.channels()],
            });
        }
        let (n, h, w) = (xs[0], xs[2], xs[3]);
        let plane = h * w;
        let m = (n * plane) as f64;

        let (mean, var) = if train {
            let mut mean = vec![0.0; ch];
            let mut var = vec![0.0; ch];
            for c in 0..ch {
                let mut sum = 0.0;
                for ni in 0..n {
                    let base = (ni * ch + c) * plane;
                    for k in 0..plane {
                        sum += self.data(x)[base + k];
                    }
                }
                mean[c] = sum / m;
                let mut sq = 0.0;
                for ni in 0..n {
                    let base = (ni * ch + c) * plane;
                    for k in 0..plane {
                        let d = self.data(x)[base + k] - mean[c];
                        sq += d * d;
                    }
                }
                var[c] = sq / m;
            }
            for c in 0..ch {
                running.mean[c] = (1.0 - cfg.momentum) * running.mean[c] + cfg.momentum * mean[c];
                running.var[c] = (1.0 - cfg.momentum) * running.var[c] + cfg.momentum * var[c];
            }
            (mean, var)
        } else {
            (running.mean.clone(), running.var.clone())
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + cfg.eps).sqrt()).collect();
        let g = self.data(gamma).to_vec();
        let bta = self.data(beta).to_vec();
        let mut y = vec![0.0; n * ch * plane];
        for ni in 0..n {
            for c in 0..ch {
                let base = (ni * ch + c) * plane;
                for k in 0..plane {
                    let xhat = (self.data(x)[base + k] - mean[c]) * inv_std[c];
                    y[base + k] = g[c] * xhat + bta[c];
                }
            }
        }
        let rec = Box::new(BnRecord { train, mean, inv_std });
        let value = Tensor::new(xs, y)?;
        Ok(self.push(Op::BatchNorm { rec }, vec![x, gamma, beta], value))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let y: Vec<f64> = self.data(x).iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(self.shape(x).to_vec(), y).expect("same shape");
        self.push(Op::Relu, vec![x], value)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let y: Vec<f64> =
            self.data(x).iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        let value = Tensor::new(self.shape(x).to_vec(), y).expect("same shape");
        self.push(Op::LeakyRelu { slope }, vec![x], value)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let y: Vec<f64> = self.data(x).iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
        let value = Tensor::new(self.shape(x).to_vec(), y).expect("same shape");
        self.push(Op::Sigmoid, vec![x], value)
    }

    /// `x @ w + b` for `x: [n, k]`, `w: [k, m]`, `b: [m]`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.expect_rank("affine", x, 2, "input")?;
        self.expect_rank("affine", w, 2, "weight")?;
        self.expect_rank("affine", b, 1, "bias")?;
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs[1] != ws[0] || self.shape(b)[0] != ws[1] {
            return Err(TensorError::ShapeMismatch { op: "affine", lhs: xs, rhs: ws });
        }
        let (n, k, m) = (xs[0], xs[1], ws[1]);
        let mut y = vec![0.0; n * m];
        for ni in 0..n {
            for mi in 0..m {
                let mut acc = self.data(b)[mi];
                for ki in 0..k {
                    acc += self.data(x)[ni * k + ki] * self.data(w)[ki * m + mi];
                }
                y[ni * m + mi] = acc;
            }
        }
        let value = Tensor::new(vec![n, m], y)?;
        Ok(self.push(Op::Affine, vec![x, w, b], value))
    }

    /// Concatenate two NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.expect_rank("concat_channels", a, 4, "lhs")?;
        self.expect_rank("concat_channels", b, 4, "rhs")?;
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3] {
            return Err(TensorError::ShapeMismatch { op: "concat_channels", lhs: sa, rhs: sb });
        }
        let (n, ca, cb, plane) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
        let mut y = vec![0.0; n * (ca + cb) * plane];
        for ni in 0..n {
            let dst = ni * (ca + cb) * plane;
            let asrc = ni * ca * plane;
            let bsrc = ni * cb * plane;
            y[dst..dst + ca * plane].copy_from_slice(&self.data(a)[asrc..asrc + ca * plane]);
            y[dst + ca * plane..dst + (ca + cb) * plane]
                .copy_from_slice(&self.data(b)[bsrc..bsrc + cb * plane]);
        }
        let value = Tensor::new(vec![n, ca + cb, sa[2], sa[3]], y)?;
        Ok(self.push(Op::ConcatChannels, vec![a, b], value))
    }

    /// Broadcast `[n, c]` to `[n, c, h, w]` by copying each feature across
    /// the spatial grid.
    pub fn tile_spatial(&mut self, x: NodeId, h: usize, w: usize) -> Result<NodeId, TensorError> {
        self.expect_rank("tile_spatial", x, 2, "input")?;
        let xs = self.shape(x).to_vec();
        let (n, c, plane) = (xs[0], xs[1], h * w);
        let mut y = vec![0.0; n * c * plane];
        for ni in 0..n {
            for ci in 0..c {
                let v = self.data(x)[ni * c + ci];
                let base = (ni * c + ci) * plane;
                y[base..base + plane].fill(v);
            }
        }
        let value = Tensor::new(vec![n, c, h, w], y)?;
        Ok(self.push(Op::TileSpatial, vec![x], value))
    }

    fn elementwise(
        &mut self,
        op: Op,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: name,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let y: Vec<f64> =
            self.data(a).iter().zip(self.data(b)).map(|(&x, &z)| f(x, z)).collect();
        let value = Tensor::new(self.shape(a).to_vec(), y)?;
        Ok(self.push(op, vec![a, b], value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.elementwise(Op::Add, "add", a, b, |x, z| x + z)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.elementwise(Op::Sub, "sub", a, b, |x, z| x - z)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.elementwise(Op::Mul, "mul", a, b, |x, z| x * z)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let y: Vec<f64> = self.data(x).iter().map(|&v| v * factor).collect();
        let value = Tensor::new(self.shape(x).to_vec(), y).expect("same shape");
        self.push(Op::Scale { factor }, vec![x], value)
    }

    /// `ln(1 + x)`, elementwise. Intended for non-negative magnitudes.
    pub fn log1p(&mut self, x: NodeId) -> NodeId {
        let y: Vec<f64> = self.data(x).iter().map(|&v| v.ln_1p()).collect();
        let value = Tensor::new(self.shape(x).to_vec(), y).expect("same shape");
        self.push(Op::Log1p, vec![x], value)
    }

    /// `mean(weight * |pred - target|)` over all elements, as a scalar node.
    pub fn weighted_l1(
        &mut self,
        pred: NodeId,
        target: NodeId,
        weight: NodeId,
    ) -> Result<NodeId, TensorError> {
        if self.shape(pred) != self.shape(target) {
            return Err(TensorError::ShapeMismatch {
                op: "weighted_l1",
                lhs: self.shape(pred).to_vec(),
                rhs: self.shape(target).to_vec(),
            });
        }
        if self.shape(pred) != self.shape(weight) {
            return Err(TensorError::ShapeMismatch {
                op: "weighted_l1",
                lhs: self.shape(pred).to_vec(),
                rhs: self.shape(weight).to_vec(),
            });
        }
        let n = self.nodes[pred.0].value.numel() as f64;
        let mut acc = 0.0;
        for i in 0..self.data(pred).len() {
            acc += self.data(weight)[i] * (self.data(pred)[i] - self.data(target)[i]).abs();
        }
        let value = Tensor::scalar(acc / n);
        Ok(self.push(Op::WeightedL1, vec![pred, target, weight], value))
    }

    /// Mean cross-entropy of row-wise softmax against integer labels.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        labels: &[usize],
    ) -> Result<NodeId, TensorError> {
        self.expect_rank("softmax_cross_entropy", logits, 2, "logits")?;
        let ls = self.shape(logits).to_vec();
        let (n, k) = (ls[0], ls[1]);
        if n == 0 || k == 0 {
            return Err(TensorError::BadShape {
                op: "softmax_cross_entropy",
                expected: "non-empty logits".into(),
                got: ls,
            });
        }
        if labels.len() != n {
            return Err(TensorError::BadShape {
                op: "softmax_cross_entropy",
                expected: format!("{n} labels"),
                got: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(TensorError::IndexOutOfRange {
                op: "softmax_cross_entropy",
                index: bad,
                bound: k,
            });
        }
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for ni in 0..n {
            let row = &self.data(logits)[ni * k..(ni + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (ki, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                probs[ni * k + ki] = e;
                denom += e;
            }
            for p in &mut probs[ni * k..(ni + 1) * k] {
                *p /= denom;
            }
            loss -= probs[ni * k + labels[ni]].ln();
        }
        let value = Tensor::scalar(loss / n as f64);
        let op = Op::SoftmaxCrossEntropy { labels: labels.to_vec(), probs };
        Ok(self.push(op, vec![logits], value))
    }

    /// Row-wise softmax probabilities of a cross-entropy node computed at
    /// forward time, shaped `[n, k]`.
    pub fn softmax_probs(&self, id: NodeId) -> Option<Tensor> {
        match &self.nodes[id.0].op {
            Op::SoftmaxCrossEntropy { probs, labels } => {
                let n = labels.len();
                let k = probs.len() / n.max(1);
                Tensor::new(vec![n, k], probs.clone()).ok()
            }
            _ => None,
        }
    }

    /// Gather rows of an embedding table: `table: [rows, dim]` indexed by
    /// `indices` produces `[indices.len(), dim]`.
    pub fn embed_rows(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId, TensorError> {
        self.expect_rank("embed_rows", table, 2, "table")?;
        let ts = self.shape(table).to_vec();
        let (rows, dim) = (ts[0], ts[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TensorError::IndexOutOfRange { op: "embed_rows", index: bad, bound: rows });
        }
        let mut y = vec![0.0; indices.len() * dim];
        for (j, &idx) in indices.iter().enumerate() {
            y[j * dim..(j + 1) * dim]
                .copy_from_slice(&self.data(table)[idx * dim..(idx + 1) * dim]);
        }
        let value = Tensor::new(vec![indices.len(), dim], y)?;
        Ok(self.push(Op::EmbedRows { indices: indices.to_vec() }, vec![table], value))
    }

    /// Spatial mean over NCHW: `[n, c, h, w]` to `[n, c]`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.expect_rank("global_avg_pool", x, 4, "input")?;
        let xs = self.shape(x).to_vec();
        let (n, c, plane) = (xs[0], xs[1], xs[2] * xs[3]);
        let mut y = vec![0.0; n * c];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * plane;
                let mut acc = 0.0;
                for k in 0..plane {
                    acc += self.data(x)[base + k];
                }
                y[ni * c + ci] = acc / plane as f64;
            }
        }
        let value = Tensor::new(vec![n, c], y)?;
        Ok(self.push(Op::GlobalAvgPool, vec![x], value))
    }

    /// Sum selected batch entries into groups: for input `[n, ...]` and
    /// `groups.len() == g`, output `[g, ...]` where row `i` is the sum of
    /// the input rows listed in `groups[i]`.
    pub fn batch_select_sum(
        &mut self,
        x: NodeId,
        groups: &[Vec<usize>],
    ) -> Result<NodeId, TensorError> {
        let xs = self.shape(x).to_vec();
        if xs.is_empty() {
            return Err(TensorError::BadShape {
                op: "batch_select_sum",
                expected: "rank >= 1".into(),
                got: xs,
            });
        }
        let n = xs[0];
        let rest: usize = xs[1..].iter().product();
        if let Some(&bad) = groups.iter().flatten().find(|&&i| i >= n) {
            return Err(TensorError::IndexOutOfRange {
                op: "batch_select_sum",
                index: bad,
                bound: n,
            });
        }
        let mut y = vec![0.0; groups.len() * rest];
        for (gi, group) in groups.iter().enumerate() {
            let dst = gi * rest;
            for &i in group {
                let src = i * rest;
                for k in 0..rest {
                    y[dst + k] += self.data(x)[src + k];
                }
            }
        }
        let mut shape = vec![groups.len()];
        shape.extend_from_slice(&xs[1..]);
        let value = Tensor::new(shape, y)?;
        Ok(self.push(Op::BatchSelectSum { groups: groups.to_vec() }, vec![x], value))
    }

    /// Fixed-coefficient dot product reducing any tensor to a scalar:
    /// `sum_i r[i] * x[i]`.
    pub fn dot(&mut self, x: NodeId, r: &[f64]) -> Result<NodeId, TensorError> {
        if self.nodes[x.0].value.numel() != r.len() {
            return Err(TensorError::BadShape {
                op: "dot",
                expected: format!("{} coefficients", self.nodes[x.0].value.numel()),
                got: vec![r.len()],
            });
        }
        let acc: f64 = self.data(x).iter().zip(r).map(|(&v, &c)| v * c).sum();
        let value = Tensor::scalar(acc);
        Ok(self.push(Op::DotConst { r: r.to_vec() }, vec![x], value))
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every
    /// grad-requiring leaf reachable in the graph.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, TensorError> {
        let lnode = &self.nodes[loss.0];
        if lnode.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss { shape: lnode.value.shape().to_vec() });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backprop_node(i, &dy, &mut grads);
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(dy);
            }
        }
        let out = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| match (&node.op, node.requires_grad) {
                (Op::Leaf, true) => {
                    let data = grads[i].take().unwrap_or_else(|| vec![0.0; node.value.numel()]);
                    Some(Tensor::new(node.value.shape().to_vec(), data).expect("leaf grad shape"))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads: out })
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn buf<'a>(&self, grads: &'a mut [Option<Vec<f64>>], id: NodeId) -> &'a mut Vec<f64> {
        let numel = self.nodes[id.0].value.numel();
        grads[id.0].get_or_insert_with(|| vec![0.0; numel])
    }

    fn backprop_node(&self, i: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let ins = &node.inputs;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { dims } => {
                let (x, w, _b) = (ins[0], ins[1], ins[2]);
                let xv = self.data(x).to_vec();
                let wv = self.data(w).to_vec();
                let (nx, nw, nb) = (self.needs(x), self.needs(w), self.needs(ins[2]));
                // split mutable access: compute into scratch then merge
                let mut dx = nx.then(|| vec![0.0; xv.len()]);
                let mut dw = nw.then(|| vec![0.0; wv.len()]);
                let mut db = nb.then(|| vec![0.0; self.data(ins[2]).len()]);
                kernels::conv2d_backward(
                    &xv,
                    &wv,
                    dy,
                    *dims,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    add_into(self.buf(grads, x), &dx);
                }
                if let Some(dw) = dw {
                    add_into(self.buf(grads, w), &dw);
                }
                if let Some(db) = db {
                    add_into(self.buf(grads, ins[2]), &db);
                }
            }
            Op::ConvTranspose2d { dims } => {
                let (x, w, _b) = (ins[0], ins[1], ins[2]);
                let xv = self.data(x).to_vec();
                let wv = self.data(w).to_vec();
                let (nx, nw, nb) = (self.needs(x), self.needs(w), self.needs(ins[2]));
                let mut dx = nx.then(|| vec![0.0; xv.len()]);
                let mut dw = nw.then(|| vec![0.0; wv.len()]);
                let mut db = nb.then(|| vec![0.0; self.data(ins[2]).len()]);
                kernels::conv_transpose2d_backward(
                    &xv,
                    &wv,
                    dy,
                    *dims,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    add_into(self.buf(grads, x), &dx);
                }
                if let Some(dw) = dw {
                    add_into(self.buf(grads, w), &dw);
                }
                if let Some(db) = db {
                    add_into(self.buf(grads, ins[2]), &db);
                }
            }
            Op::BatchNorm { rec } => {
                let (x, gamma, beta) = (ins[0], ins[1], ins[2]);
                let xs = self.shape(x);
                let (n, ch, plane) = (xs[0], xs[1], xs[2] * xs[3]);
                let m = (n * plane) as f64;
                let xv = self.data(x);
                let gv = self.data(gamma);

                let mut sum_dy = vec![0.0; ch];
                let mut sum_dy_xhat = vec![0.0; ch];
                for ni in 0..n {
                    for c in 0..ch {
                        let base = (ni * ch + c) * plane;
                        for k in 0..plane {
                            let d = dy[base + k];
                            let xhat = (xv[base + k] - rec.mean[c]) * rec.inv_std[c];
                            sum_dy[c] += d;
                            sum_dy_xhat[c] += d * xhat;
                        }
                    }
                }
                if self.needs(beta) {
                    add_into(self.buf(grads, beta), &sum_dy);
                }
                if self.needs(gamma) {
                    add_into(self.buf(grads, gamma), &sum_dy_xhat);
                }
                if self.needs(x) {
                    let mut dx = vec![0.0; xv.len()];
                    for ni in 0..n {
                        for c in 0..ch {
                            let base = (ni * ch + c) * plane;
                            let gi = gv[c] * rec.inv_std[c];
                            for k in 0..plane {
                                let d = dy[base + k];
                                dx[base + k] = if rec.train {
                                    let xhat =
                                        (xv[base + k] - rec.mean[c]) * rec.inv_std[c];
                                    gi * (d - sum_dy[c] / m - xhat * sum_dy_xhat[c] / m)
                                } else {
                                    gi * d
                                };
                            }
                        }
                    }
                    add_into(self.buf(grads, x), &dx);
                }
            }
            Op::Relu => {
                if self.needs(ins[0]) {
                    let xv = self.data(ins[0]);
                    let dst = self.buf(grads, ins[0]);
                    for (k, &d) in dy.iter().enumerate() {
                        if xv[k] > 0.0 {
                            dst[k] += d;
                        }
                    }
                }
            }
            Op::LeakyRelu { slope } => {
                if self.needs(ins[0]) {
                    let xv = self.data(ins[0]);
                    let s = *slope;
                    let dst = self.buf(grads, ins[0]);
                    for (k, &d) in dy.iter().enumerate() {
                        dst[k] += if xv[k] > 0.0 { d } else { s * d };
                    }
                }
            }
            Op::Sigmoid => {
                if self.needs(ins[0]) {
                    let yv = node.value.data();
                    let dst = self.buf(grads, ins[0]);
                    for (k, &d) in dy.iter().enumerate() {
                        dst[k] += d * yv[k] * (1.0 - yv[k]);
                    }
                }
            }
            Op::Affine => {
                let (x, w, b) = (ins[0], ins[1], ins[2]);
                let (n, k) = (self.shape(x)[0], self.shape(x)[1]);
                let m = self.shape(w)[1];
                if self.needs(x) {
                    let wv = self.data(w).to_vec();
                    let dst = self.buf(grads, x);
                    for ni in 0..n {
                        for ki in 0..k {
                            let mut acc = 0.0;
                            for mi in 0..m {
                                acc += dy[ni * m + mi] * wv[ki * m + mi];
                            }
                            dst[ni * k + ki] += acc;
                        }
                    }
                }
                if self.needs(w) {
                    let xv = self.data(x).to_vec();
                    let dst = self.buf(grads, w);
                    for ki in 0..k {
                        for mi in 0..m {
                            let mut acc = 0.0;
                            for ni in 0..n {
                                acc += xv[ni * k + ki] * dy[ni * m + mi];
                            }
                            dst[ki * m + mi] += acc;
                        }
                    }
                }
                if self.needs(b) {
                    let dst = self.buf(grads, b);
                    for ni in 0..n {
                        for mi in 0..m {
                            dst[mi] += dy[ni * m + mi];
                        }
                    }
                }
            }
            Op::ConcatChannels => {
                let (a, b) = (ins[0], ins[1]);
                let (sa, sb) = (self.shape(a), self.shape(b));
                let (n, ca, cb, plane) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
                if self.needs(a) {
                    let dst = self.buf(grads, a);
                    for ni in 0..n {
                        let src = ni * (ca + cb) * plane;
                        let d = ni * ca * plane;
                        for k in 0..ca * plane {
                            dst[d + k] += dy[src + k];
                        }
                    }
                }
                if self.needs(b) {
                    let dst = self.buf(grads, b);
                    for ni in 0..n {
                        let src = ni * (ca + cb) * plane + ca * plane;
                        let d = ni * cb * plane;
                        for k in 0..cb * plane {
                            dst[d + k] += dy[src + k];
                        }
                    }
                }
            }
            Op::TileSpatial => {
                if self.needs(ins[0]) {
                    let ys = node.value.shape();
                    let (n, c, plane) = (ys[0], ys[1], ys[2] * ys[3]);
                    let dst = self.buf(grads, ins[0]);
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * plane;
                            let mut acc = 0.0;
                            for k in 0..plane {
                                acc += dy[base + k];
                            }
                            dst[ni * c + ci] += acc;
                        }
                    }
                }
            }
            Op::Add => {
                for &inp in ins {
                    if self.needs(inp) {
                        add_into(self.buf(grads, inp), dy);
                    }
                }
            }
            Op::Sub => {
                if self.needs(ins[0]) {
                    add_into(self.buf(grads, ins[0]), dy);
                }
                if self.needs(ins[1]) {
                    let dst = self.buf(grads, ins[1]);
                    for (k, &d) in dy.iter().enumerate() {
                        dst[k] -= d;
                    }
                }
            }
            Op::Mul => {
                let (a, b) = (ins[0], ins[1]);
                if self.needs(a) {
                    let bv = self.data(b).to_vec();
                    let dst = self.buf(grads, a);
                    for (k, &d) in dy.iter().enumerate() {
                        dst[k] += d * bv[k];
                    }
                }
                if self.needs(b) {
                    let av = self.data(a).to_vec();
                    let dst = self.buf(grads, b);
                    for (k, &d) in dy.iter().enumerate() {
                        dst[k] += d * av[k];
                    }
                }
            }
            Op::Scale { factor } => {
                if self.needs(ins[0]) {
                    let f = *factor;
                    let dst = self.buf(grads, ins[0]);
                    for (k, &d) in dy.iter().enumerate() {
                        dst[k] += f * d;
                    }
                }
            }
            Op::Log1p => {
                if self.needs(ins[0]) {
                    let xv = self.data(ins[0]);
                    let dst = self.buf(grads, ins[0]);
                    for (k, &d) in dy.iter().enumerate() {
                        dst[k] += d / (1.0 + xv[k]);
                    }
                }
            }
            Op::WeightedL1 => {
                let (pred, target, weight) = (ins[0], ins[1], ins[2]);
                let numel = self.nodes[pred.0].value.numel() as f64;
                let d0 = dy[0] / numel;
                let pv = self.data(pred);
                let tv = self.data(target);
                let wv = self.data(weight);
                if self.needs(pred) || self.needs(target) {
                    let signs: Vec<f64> = pv
                        .iter()
                        .zip(tv)
                        .map(|(&p, &t)| {
                            let diff = p - t;
                            if diff > 0.0 {
                                1.0
                            } else if diff < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    if self.needs(pred) {
                        let wv = wv.to_vec();
                        let dst = self.buf(grads, pred);
                        for k in 0..dst.len() {
                            dst[k] += d0 * wv[k] * signs[k];
                        }
                    }
                    if self.needs(target) {
                        let wv = wv.to_vec();
                        let dst = self.buf(grads, target);
                        for k in 0..dst.len() {
                            dst[k] -= d0 * wv[k] * signs[k];
                        }
                    }
                }
                if self.needs(weight) {
                    let diffs: Vec<f64> =
                        pv.iter().zip(tv).map(|(&p, &t)| (p - t).abs()).collect();
                    let dst = self.buf(grads, weight);
                    for k in 0..dst.len() {
                        dst[k] += d0 * diffs[k];
                    }
                }
            }
            Op::SoftmaxCrossEntropy { labels, probs } => {
                if self.needs(ins[0]) {
                    let n = labels.len();
                    let k = probs.len() / n;
                    let d0 = dy[0] / n as f64;
                    let dst = self.buf(grads, ins[0]);
                    for ni in 0..n {
                        for ki in 0..k {
                            let onehot = if ki == labels[ni] { 1.0 } else { 0.0 };
                            dst[ni * k + ki] += d0 * (probs[ni * k + ki] - onehot);
                        }
                    }
                }
            }
            Op::EmbedRows { indices } => {
                if self.needs(ins[0]) {
                    let dim = self.shape(ins[0])[1];
                    let dst = self.buf(grads, ins[0]);
                    for (j, &idx) in indices.iter().enumerate() {
                        for d in 0..dim {
                            dst[idx * dim + d] += dy[j * dim + d];
                        }
                    }
                }
            }
            Op::GlobalAvgPool => {
                if self.needs(ins[0]) {
                    let xs = self.shape(ins[0]);
                    let (n, c, plane) = (xs[0], xs[1], xs[2] * xs[3]);
                    let dst = self.buf(grads, ins[0]);
                    for ni in 0..n {
                        for ci in 0..c {
                            let d = dy[ni * c + ci] / plane as f64;
                            let base = (ni * c + ci) * plane;
                            for k in 0..plane {
                                dst[base + k] += d;
                            }
                        }
                    }
                }
            }
            Op::BatchSelectSum { groups } => {
                if self.needs(ins[0]) {
                    let rest: usize = self.shape(ins[0])[1..].iter().product();
                    let dst = self.buf(grads, ins[0]);
                    for (gi, group) in groups.iter().enumerate() {
                        let src = gi * rest;
                        for &i in group {
                            let d = i * rest;
                            for k in 0..rest {
                                dst[d + k] += dy[src + k];
                            }
                        }
                    }
                }
            }
            Op::DotConst { r } => {
                if self.needs(ins[0]) {
                    let d0 = dy[0];
                    let dst = self.buf(grads, ins[0]);
                    for (k, &c) in r.iter().enumerate() {
                        dst[k] += d0 * c;
                    }
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
