use super::conv::{self, ConvDims};
use super::{Tensor, TensorError};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(pub(crate) usize);

/// Whether batch_norm normalizes with batch statistics (updating the running
/// estimates) or with the stored running statistics.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BnMode {
    Train,
    Eval,
}

/// Running mean/variance estimates owned by the model, one pair per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

pub(crate) const BN_EPS: f64 = 1e-5;
/// Fraction of the old running estimate kept per update.
pub(crate) const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug)]
struct BnCtx {
    mode: BnMode,
    /// 1/sqrt(var + eps) per channel for the statistics used in forward.
    inv_std: Vec<f64>,
    /// Normalized input, saved for the gamma gradient (and the train-mode
    /// input gradient).
    xhat: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Relu {
        x: NodeId,
    },
    Abs {
        x: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    AddRowBias {
        x: NodeId,
        bias: NodeId,
    },
    Matmul {
        a: NodeId,
        b: NodeId,
    },
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        ctx: BnCtx,
    },
    MeanAxes {
        x: NodeId,
        axes: Vec<usize>,
        count: usize,
    },
    SumAll {
        x: NodeId,
    },
    Softmax {
        x: NodeId,
        axis: usize,
    },
    Reshape {
        x: NodeId,
    },
    AttentionPool {
        features: NodeId,
        weights: NodeId,
    },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Relu { x } | Op::Abs { x } | Op::SumAll { x } | Op::Reshape { x } => vec![*x],
            Op::MeanAxes { x, .. } | Op::Softmax { x, .. } => vec![*x],
            Op::Add { a, b } | Op::Sub { a, b } | Op::Matmul { a, b } => vec![*a, *b],
            Op::AddRowBias { x, bias } => vec![*x, *bias],
            Op::Conv2d { input, kernel, .. } => vec![*input, *kernel],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::AttentionPool { features, weights } => vec![*features, *weights],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    /// True when a gradient has to flow through this node (it is a
    /// gradient-requiring leaf or depends on one).
    needs_grad: bool,
}

/// Computation graph recording operations in construction order, which is a
/// topological order by construction: an operation can only consume node ids
/// that already exist. The backward pass walks ids in exact reverse order.
///
/// Gradients accumulate across repeated [`Graph::backward`] calls until
/// [`Graph::zero_grads`]; the trainer builds a fresh graph per step, which
/// serves as its reset.
pub struct Graph {
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Input ids of a node; every returned id is smaller than `id`.
    pub fn inputs_of(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.inputs()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated on a gradient-requiring leaf, if backward ran.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].value.grad()
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
    }

    pub fn leaf(&mut self, tensor: Tensor) -> NodeId {
        let needs = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v.max(0.0)).collect();
        let out = Tensor::from_op(xv.shape().to_vec(), data, "relu")?;
        Ok(self.push(out, Op::Relu { x }, self.needs(x)))
    }

    pub fn abs(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v.abs()).collect();
        let out = Tensor::from_op(xv.shape().to_vec(), data, "abs")?;
        Ok(self.push(out, Op::Abs { x }, self.needs(x)))
    }

    fn elementwise_pair(
        &self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
    ) -> Result<(), TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.elementwise_pair("add", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::from_op(av.shape().to_vec(), data, "add")?;
        Ok(self.push(out, Op::Add { a, b }, self.needs(a) || self.needs(b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.elementwise_pair("sub", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x - y).collect();
        let out = Tensor::from_op(av.shape().to_vec(), data, "sub")?;
        Ok(self.push(out, Op::Sub { a, b }, self.needs(a) || self.needs(b)))
    }

    /// x[N,M] + bias[M], broadcast over rows.
    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if xv.shape().len() != 2 {
            return Err(TensorError::RankMismatch {
                op: "add_row_bias",
                expected: 2,
                shape: xv.shape().to_vec(),
            });
        }
        let (n, m) = (xv.shape()[0], xv.shape()[1]);
        if bv.shape() != [m] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row_bias",
                lhs: xv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(m) {
            for (v, b) in row.iter_mut().zip(bv.data()) {
                *v += b;
            }
        }
        let out = Tensor::from_op(vec![n, m], data, "add_row_bias")?;
        Ok(self.push(
            out,
            Op::AddRowBias { x, bias },
            self.needs(x) || self.needs(bias),
        ))
    }

    /// Rank-2 matrix product [m,k] x [k,n] -> [m,n].
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 {
            return Err(TensorError::RankMismatch {
                op: "matmul",
                expected: 2,
                shape: if av.shape().len() != 2 {
                    av.shape().to_vec()
                } else {
                    bv.shape().to_vec()
                },
            });
        }
        let (m, k) = (av.shape()[0], av.shape()[1]);
        let (k2, n) = (bv.shape()[0], bv.shape()[1]);
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut data = vec![0.0; m * n];
        conv::matmul(av.data(), bv.data(), m, k, n, &mut data);
        let out = Tensor::from_op(vec![m, n], data, "matmul")?;
        Ok(self.push(out, Op::Matmul { a, b }, self.needs(a) || self.needs(b)))
    }

    /// 2-D cross-correlation of input [N,C,H,W] with kernel [K,C,kh,kw].
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, TensorError> {
        let dims = self.conv_dims(input, kernel, stride, padding)?;
        let data = conv::forward(self.value(input).data(), self.value(kernel).data(), &dims);
        let shape = vec![dims.batch, dims.out_channels, dims.out_h, dims.out_w];
        let out = Tensor::from_op(shape, data, "conv2d")?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            },
            self.needs(input) || self.needs(kernel),
        ))
    }

    fn conv_dims(
        &self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<ConvDims, TensorError> {
        let (iv, kv) = (self.value(input), self.value(kernel));
        if iv.shape().len() != 4 {
            return Err(TensorError::RankMismatch {
                op: "conv2d",
                expected: 4,
                shape: iv.shape().to_vec(),
            });
        }
        if kv.shape().len() != 4 {
            return Err(TensorError::RankMismatch {
                op: "conv2d",
                expected: 4,
                shape: kv.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(TensorError::ZeroStride);
        }
        let (n, c, h, w) = (iv.shape()[0], iv.shape()[1], iv.shape()[2], iv.shape()[3]);
        let (k, kc, kh, kw) = (kv.shape()[0], kv.shape()[1], kv.shape()[2], kv.shape()[3]);
        if kc != c {
            return Err(TensorError::ChannelMismatch { input: c, kernel: kc });
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(TensorError::KernelTooLarge {
                kernel: kv.shape().to_vec(),
                input: iv.shape().to_vec(),
                padding,
            });
        }
        Ok(ConvDims {
            batch: n,
            in_channels: c,
            in_h: h,
            in_w: w,
            out_channels: k,
            kh,
            kw,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        })
    }

    /// Per-channel batch normalization of x [N,C,H,W] with affine parameters
    /// gamma/beta [C]. Train mode normalizes with batch statistics (biased
    /// variance) and folds them into `stats`; eval mode uses `stats`.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mode: BnMode,
        stats: &mut BnStats,
    ) -> Result<NodeId, TensorError> {
        let xv = self.value(x);
        if xv.shape().len() != 4 {
            return Err(TensorError::RankMismatch {
                op: "batch_norm",
                expected: 4,
                shape: xv.shape().to_vec(),
            });
        }
        let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        for param in [gamma, beta] {
            if self.value(param).shape() != [c] {
                return Err(TensorError::ShapeMismatch {
                    op: "batch_norm",
                    lhs: xv.shape().to_vec(),
                    rhs: self.value(param).shape().to_vec(),
                });
            }
        }
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm",
                lhs: vec![c],
                rhs: vec![stats.mean.len()],
            });
        }
        let m = n * h * w;
        if mode == BnMode::Train && m < 2 {
            return Err(TensorError::DegenerateVariance { count: m });
        }

        let (mean, var) = match mode {
            BnMode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                per_channel(xv.data(), c, h * w, |ch, v| mean[ch] += v);
                for mu in &mut mean {
                    *mu /= m as f64;
                }
                per_channel(xv.data(), c, h * w, |ch, v| {
                    let d = v - mean[ch];
                    var[ch] += d * d;
                });
                for s in &mut var {
                    *s /= m as f64;
                }
                for ch in 0..c {
                    stats.mean[ch] = BN_MOMENTUM * stats.mean[ch] + (1.0 - BN_MOMENTUM) * mean[ch];
                    stats.var[ch] = BN_MOMENTUM * stats.var[ch] + (1.0 - BN_MOMENTUM) * var[ch];
                }
                (mean, var)
            }
            BnMode::Eval => (stats.mean.clone(), stats.var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();

        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![0.0; xv.numel()];
        let mut data = vec![0.0; xv.numel()];
        let plane = h * w;
        for (i, &v) in xv.data().iter().enumerate() {
            let ch = (i / plane) % c;
            let xh = (v - mean[ch]) * inv_std[ch];
            xhat[i] = xh;
            data[i] = gv[ch] * xh + bv[ch];
        }
        let out = Tensor::from_op(xv.shape().to_vec(), data, "batch_norm")?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                ctx: BnCtx {
                    mode,
                    inv_std,
                    xhat,
                },
            },
            needs,
        ))
    }

    /// Mean over the given axes; the output shape drops those axes.
    pub fn mean_axes(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId, TensorError> {
        let xv = self.value(x);
        let rank = xv.shape().len();
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        if axes.is_empty() {
            return Err(TensorError::AxisOutOfRange {
                op: "mean_axes",
                axis: 0,
                rank,
            });
        }
        for &axis in &axes {
            if axis >= rank {
                return Err(TensorError::AxisOutOfRange {
                    op: "mean_axes",
                    axis,
                    rank,
                });
            }
        }
        let out_shape: Vec<usize> = (0..rank)
            .filter(|d| !axes.contains(d))
            .map(|d| xv.shape()[d])
            .collect();
        let count: usize = axes.iter().map(|&d| xv.shape()[d]).product();
        let out_numel: usize = out_shape.iter().product();
        let mut data = vec![0.0; out_numel];
        let map = ReduceMap::new(xv.shape(), &axes);
        for (i, &v) in xv.data().iter().enumerate() {
            data[map.out_index(i)] += v;
        }
        for v in &mut data {
            *v /= count as f64;
        }
        let out = Tensor::from_op(out_shape, data, "mean_axes")?;
        Ok(self.push(out, Op::MeanAxes { x, axes, count }, self.needs(x)))
    }

    /// Mean of every element, yielding a scalar.
    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let rank = self.value(x).shape().len();
        if rank == 0 {
            return self.reshape(x, Vec::new());
        }
        let axes: Vec<usize> = (0..rank).collect();
        self.mean_axes(x, &axes)
    }

    /// Sum of every element, yielding a scalar.
    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let xv = self.value(x);
        let total: f64 = xv.data().iter().sum();
        let out = Tensor::from_op(Vec::new(), vec![total], "sum_all")?;
        Ok(self.push(out, Op::SumAll { x }, self.needs(x)))
    }

    /// Numerically stable softmax over one axis; outputs are positive and
    /// sum to 1 along that axis.
    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId, TensorError> {
        let xv = self.value(x);
        let rank = xv.shape().len();
        if axis >= rank {
            return Err(TensorError::AxisOutOfRange {
                op: "softmax",
                axis,
                rank,
            });
        }
        let lanes = Lanes::new(xv.shape(), axis);
        let mut data = vec![0.0; xv.numel()];
        let src = xv.data();
        lanes.for_each(|idx| {
            let mut max = f64::NEG_INFINITY;
            for &i in idx {
                max = max.max(src[i]);
            }
            let mut sum = 0.0;
            for &i in idx {
                let e = (src[i] - max).exp();
                data[i] = e;
                sum += e;
            }
            for &i in idx {
                data[i] /= sum;
            }
        });
        let out = Tensor::from_op(xv.shape().to_vec(), data, "softmax")?;
        Ok(self.push(out, Op::Softmax { x, axis }, self.needs(x)))
    }

    /// View with a new shape of identical element count.
    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId, TensorError> {
        let xv = self.value(x);
        if shape.contains(&0) {
            return Err(TensorError::ZeroExtent { shape });
        }
        let numel: usize = shape.iter().product();
        if numel != xv.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: xv.shape().to_vec(),
                rhs: shape,
            });
        }
        let out = Tensor::from_op(shape, xv.data().to_vec(), "reshape")?;
        Ok(self.push(out, Op::Reshape { x }, self.needs(x)))
    }

    /// Weighted spatial pooling: features [N,C,H,W] and per-position weights
    /// [N,H*W] reduce to [N,C] with pooled[n,c] = sum_p w[n,p]*f[n,c,p].
    pub fn attention_pool(
        &mut self,
        features: NodeId,
        weights: NodeId,
    ) -> Result<NodeId, TensorError> {
        let (fv, wv) = (self.value(features), self.value(weights));
        if fv.shape().len() != 4 {
            return Err(TensorError::RankMismatch {
                op: "attention_pool",
                expected: 4,
                shape: fv.shape().to_vec(),
            });
        }
        if wv.shape().len() != 2 {
            return Err(TensorError::RankMismatch {
                op: "attention_pool",
                expected: 2,
                shape: wv.shape().to_vec(),
            });
        }
        let (n, c, h, w) = (fv.shape()[0], fv.shape()[1], fv.shape()[2], fv.shape()[3]);
        let p = h * w;
        if wv.shape() != [n, p] {
            return Err(TensorError::ShapeMismatch {
                op: "attention_pool",
                lhs: fv.shape().to_vec(),
                rhs: wv.shape().to_vec(),
            });
        }
        let mut data = vec![0.0; n * c];
        for ni in 0..n {
            let wrow = &wv.data()[ni * p..(ni + 1) * p];
            for ci in 0..c {
                let plane = &fv.data()[(ni * c + ci) * p..(ni * c + ci + 1) * p];
                let mut acc = 0.0;
                for (fw, fx) in wrow.iter().zip(plane) {
                    acc += fw * fx;
                }
                data[ni * c + ci] = acc;
            }
        }
        let out = Tensor::from_op(vec![n, c], data, "attention_pool")?;
        Ok(self.push(
            out,
            Op::AttentionPool { features, weights },
            self.needs(features) || self.needs(weights),
        ))
    }

    /// Reverse-mode sweep from a scalar loss. Visits nodes in exact reverse
    /// construction order and accumulates gradients onto every
    /// gradient-requiring leaf tensor. Repeated calls accumulate.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: loss_value.shape().to_vec(),
            });
        }
        let mut scratch: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        scratch[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            if scratch[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            self.propagate(id, &mut scratch);
        }
        for (id, slot) in scratch.into_iter().enumerate() {
            if let Some(grad) = slot {
                let node = &mut self.nodes[id];
                if node.value.requires_grad() {
                    if !grad.iter().all(|v| v.is_finite()) {
                        return Err(TensorError::NonFinite { op: "backward" });
                    }
                    node.value.accumulate_grad(&grad);
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, scratch: &mut [Option<Vec<f64>>]) {
        let (lower, upper) = scratch.split_at_mut(id);
        let gout = upper[0].as_ref().expect("visited node has a gradient");
        let node = &self.nodes[id];
        let mut sink = GradSink {
            nodes: &self.nodes,
            lower,
        };
        match &node.op {
            Op::Leaf => {}
            Op::Relu { x } => {
                let xd = self.nodes[x.0].value.data();
                sink.add_with(*x, |g| {
                    for (i, gi) in g.iter_mut().enumerate() {
                        if xd[i] > 0.0 {
                            *gi += gout[i];
                        }
                    }
                });
            }
            Op::Abs { x } => {
                let xd = self.nodes[x.0].value.data();
                sink.add_with(*x, |g| {
                    for (i, gi) in g.iter_mut().enumerate() {
                        // Subgradient 0 at exactly 0.
                        *gi += gout[i] * sign(xd[i]);
                    }
                });
            }
            Op::Add { a, b } => {
                sink.add_with(*a, |g| {
                    for (gi, go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                });
                sink.add_with(*b, |g| {
                    for (gi, go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                });
            }
            Op::Sub { a, b } => {
                sink.add_with(*a, |g| {
                    for (gi, go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                });
                sink.add_with(*b, |g| {
                    for (gi, go) in g.iter_mut().zip(gout) {
                        *gi -= go;
                    }
                });
            }
            Op::AddRowBias { x, bias } => {
                let m = self.nodes[bias.0].value.numel();
                sink.add_with(*x, |g| {
                    for (gi, go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                });
                sink.add_with(*bias, |g| {
                    for (i, go) in gout.iter().enumerate() {
                        g[i % m] += go;
                    }
                });
            }
            Op::Matmul { a, b } => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                sink.add_with(*a, |g| {
                    // dA = gC * B^T
                    let mut bt = vec![0.0; k * n];
                    transpose_into(bv.data(), k, n, &mut bt);
                    conv::matmul_acc(gout, &bt, m, n, k, g);
                });
                sink.add_with(*b, |g| {
                    // dB = A^T * gC
                    let mut at = vec![0.0; m * k];
                    transpose_into(av.data(), m, k, &mut at);
                    conv::matmul_acc(&at, gout, k, m, n, g);
                });
            }
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            } => {
                let dims = self
                    .conv_dims(*input, *kernel, *stride, *padding)
                    .expect("shapes validated at construction");
                let iv = self.nodes[input.0].value.data();
                let kv = self.nodes[kernel.0].value.data();
                let want_input = self.nodes[input.0].needs_grad;
                let want_kernel = self.nodes[kernel.0].needs_grad;
                let mut dinput = if want_input {
                    Some(vec![0.0; iv.len()])
                } else {
                    None
                };
                let mut dkernel = if want_kernel {
                    Some(vec![0.0; kv.len()])
                } else {
                    None
                };
                conv::backward(
                    iv,
                    kv,
                    gout,
                    &dims,
                    dinput.as_deref_mut(),
                    dkernel.as_deref_mut(),
                );
                if let Some(di) = dinput {
                    sink.add_slice(*input, &di);
                }
                if let Some(dk) = dkernel {
                    sink.add_slice(*kernel, &dk);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                ctx,
            } => {
                let shape = self.nodes[x.0].value.shape();
                let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
                let plane = h * w;
                let m = (n * plane) as f64;
                let gv = self.nodes[gamma.0].value.data();
                let mut sum_dy = vec![0.0; c];
                let mut sum_dy_xhat = vec![0.0; c];
                for (i, &go) in gout.iter().enumerate() {
                    let ch = (i / plane) % c;
                    sum_dy[ch] += go;
                    sum_dy_xhat[ch] += go * ctx.xhat[i];
                }
                sink.add_with(*beta, |g| {
                    for (gi, s) in g.iter_mut().zip(&sum_dy) {
                        *gi += s;
                    }
                });
                sink.add_with(*gamma, |g| {
                    for (gi, s) in g.iter_mut().zip(&sum_dy_xhat) {
                        *gi += s;
                    }
                });
                sink.add_with(*x, |g| match ctx.mode {
                    BnMode::Train => {
                        for (i, gi) in g.iter_mut().enumerate() {
                            let ch = (i / plane) % c;
                            *gi += gv[ch]
                                * ctx.inv_std[ch]
                                * (gout[i] - sum_dy[ch] / m - ctx.xhat[i] * sum_dy_xhat[ch] / m);
                        }
                    }
                    BnMode::Eval => {
                        for (i, gi) in g.iter_mut().enumerate() {
                            let ch = (i / plane) % c;
                            *gi += gv[ch] * ctx.inv_std[ch] * gout[i];
                        }
                    }
                });
            }
            Op::MeanAxes { x, axes, count } => {
                let map = ReduceMap::new(self.nodes[x.0].value.shape(), axes);
                let scale = 1.0 / *count as f64;
                sink.add_with(*x, |g| {
                    for (i, gi) in g.iter_mut().enumerate() {
                        *gi += gout[map.out_index(i)] * scale;
                    }
                });
            }
            Op::SumAll { x } => {
                let go = gout[0];
                sink.add_with(*x, |g| {
                    for gi in g.iter_mut() {
                        *gi += go;
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let y = self.nodes[id].value.data();
                let lanes = Lanes::new(self.nodes[x.0].value.shape(), *axis);
                sink.add_with(*x, |g| {
                    lanes.for_each(|idx| {
                        let mut dot = 0.0;
                        for &i in idx {
                            dot += gout[i] * y[i];
                        }
                        for &i in idx {
                            g[i] += y[i] * (gout[i] - dot);
                        }
                    });
                });
            }
            Op::Reshape { x } => {
                sink.add_slice(*x, gout);
            }
            Op::AttentionPool { features, weights } => {
                let fv = &self.nodes[features.0].value;
                let wv = &self.nodes[weights.0].value;
                let (n, c) = (fv.shape()[0], fv.shape()[1]);
                let p = fv.shape()[2] * fv.shape()[3];
                sink.add_with(*features, |g| {
                    for ni in 0..n {
                        let wrow = &wv.data()[ni * p..(ni + 1) * p];
                        for ci in 0..c {
                            let go = gout[ni * c + ci];
                            let gplane = &mut g[(ni * c + ci) * p..(ni * c + ci + 1) * p];
                            for (gi, fw) in gplane.iter_mut().zip(wrow) {
                                *gi += go * fw;
                            }
                        }
                    }
                });
                sink.add_with(*weights, |g| {
                    for ni in 0..n {
                        let grow = &mut g[ni * p..(ni + 1) * p];
                        for ci in 0..c {
                            let go = gout[ni * c + ci];
                            let plane = &fv.data()[(ni * c + ci) * p..(ni * c + ci + 1) * p];
                            for (gi, fx) in grow.iter_mut().zip(plane) {
                                *gi += go * fx;
                            }
                        }
                    }
                });
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn transpose_into(src: &[f64], rows: usize, cols: usize, dst: &mut [f64]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Writes input gradients during backward, skipping inputs that do not need
/// them and allocating each buffer on first touch.
struct GradSink<'a> {
    nodes: &'a [Node],
    lower: &'a mut [Option<Vec<f64>>],
}

impl GradSink<'_> {
    fn add_with(&mut self, id: NodeId, fill: impl FnOnce(&mut [f64])) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let numel = self.nodes[id.0].value.numel();
        let slot = self.lower[id.0].get_or_insert_with(|| vec![0.0; numel]);
        fill(slot);
    }

    fn add_slice(&mut self, id: NodeId, delta: &[f64]) {
        self.add_with(id, |g| {
            for (gi, di) in g.iter_mut().zip(delta) {
                *gi += di;
            }
        });
    }
}

/// Apply a closure to each channel value of an [N,C,H,W] buffer.
fn per_channel(data: &[f64], channels: usize, plane: usize, mut f: impl FnMut(usize, f64)) {
    for (i, &v) in data.iter().enumerate() {
        f((i / plane) % channels, v);
    }
}

/// Index arithmetic for reductions: maps a linear input index to the linear
/// output index with the reduced axes removed.
struct ReduceMap {
    in_strides: Vec<usize>,
    out_strides: Vec<usize>,
    in_shape: Vec<usize>,
}

impl ReduceMap {
    fn new(shape: &[usize], axes: &[usize]) -> Self {
        let rank = shape.len();
        let mut in_strides = vec![1; rank];
        for d in (0..rank.saturating_sub(1)).rev() {
            in_strides[d] = in_strides[d + 1] * shape[d + 1];
        }
        // Stride in the output for each input dim; reduced dims get 0.
        let kept: Vec<usize> = (0..rank).filter(|d| !axes.contains(d)).collect();
        let mut kept_strides = vec![1; kept.len()];
        for i in (0..kept.len().saturating_sub(1)).rev() {
            kept_strides[i] = kept_strides[i + 1] * shape[kept[i + 1]];
        }
        let mut out_strides = vec![0; rank];
        for (i, &d) in kept.iter().enumerate() {
            out_strides[d] = kept_strides[i];
        }
        Self {
            in_strides,
            out_strides,
            in_shape: shape.to_vec(),
        }
    }

    #[inline]
    fn out_index(&self, mut idx: usize) -> usize {
        let mut out = 0;
        for d in 0..self.in_shape.len() {
            let coord = idx / self.in_strides[d];
            idx %= self.in_strides[d];
            out += coord * self.out_strides[d];
        }
        out
    }
}

/// Iterates index sets of one axis lane at a time for softmax-style ops.
struct Lanes {
    outer: usize,
    len: usize,
    inner: usize,
}

impl Lanes {
    fn new(shape: &[usize], axis: usize) -> Self {
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        Self {
            outer,
            len: shape[axis],
            inner,
        }
    }

    fn for_each(&self, mut f: impl FnMut(&[usize])) {
        let mut idx = vec![0usize; self.len];
        for o in 0..self.outer {
            for i in 0..self.inner {
                for (k, slot) in idx.iter_mut().enumerate() {
                    *slot = (o * self.len + k) * self.inner + i;
                }
                f(&idx);
            }
        }
    }
}
