use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ModelError};
use crate::autodiff::{BnMode, BnStats, Graph, NodeId, Tensor, TensorError};
use crate::seeds::{subseed, tag};

/// Per-image spatial attention grid; non-negative, sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub height: usize,
    pub width: usize,
    pub weights: Vec<f64>,
}

impl AttentionWeights {
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// A built forward graph plus the node handles the trainer needs.
pub struct ForwardPass {
    pub graph: Graph,
    /// Leaf ids of the parameters, aligned with the model's parameter order.
    pub param_nodes: Vec<NodeId>,
    /// Diopter predictions, shape [N].
    pub predictions: NodeId,
    /// Attention weights, shape [N, positions].
    pub attention: NodeId,
}

#[derive(Debug, Clone, Copy)]
struct BlockIx {
    bn1: usize,
    conv1: usize,
    bn2: usize,
    conv2: usize,
    skip: Option<usize>,
    stats1: usize,
    stats2: usize,
    stride: usize,
}

#[derive(Debug, Clone)]
struct ParamIx {
    stem_conv1: usize,
    stem_bn: usize,
    stem_conv2: usize,
    blocks: Vec<BlockIx>,
    head_bn: usize,
    attn_w: usize,
    fc1_w: usize,
    fc1_b: usize,
    fc2_w: usize,
    fc2_b: usize,
    stem_stats: usize,
    head_stats: usize,
}

/// The attention-augmented residual regressor. Parameters live in a flat,
/// named, deterministically ordered registry so checkpoints and the
/// optimizer can address them by index.
#[derive(Debug, Clone)]
pub struct AttentionResNet {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    stats: Vec<BnStats>,
    ix: ParamIx,
}

struct Builder {
    names: Vec<String>,
    params: Vec<Tensor>,
    stats: Vec<BnStats>,
    rng: ChaCha12Rng,
}

impl Builder {
    /// He fan-in initialization for convolution kernels.
    fn conv(&mut self, name: String, shape: [usize; 4]) -> usize {
        let fan_in = shape[1] * shape[2] * shape[3];
        self.random_tensor(name, shape.to_vec(), (2.0 / fan_in as f64).sqrt())
    }

    fn random_tensor(&mut self, name: String, shape: Vec<usize>, std: f64) -> usize {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("positive std");
        let data: Vec<f64> = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.names.push(name);
        self.params.push(Tensor::new(shape, data).expect("finite init"));
        self.params.len() - 1
    }

    fn constant(&mut self, name: String, shape: Vec<usize>, value: f64) -> usize {
        self.names.push(name);
        self.params
            .push(Tensor::full(shape, value).expect("finite init"));
        self.params.len() - 1
    }

    /// gamma/beta pair plus running statistics; returns (gamma index, stats index).
    fn batch_norm(&mut self, prefix: &str, channels: usize) -> (usize, usize) {
        let gamma = self.constant(format!("{prefix}.gamma"), vec![channels], 1.0);
        self.constant(format!("{prefix}.beta"), vec![channels], 0.0);
        self.stats.push(BnStats::new(channels));
        (gamma, self.stats.len() - 1)
    }

    fn linear(&mut self, prefix: &str, in_dim: usize, out_dim: usize) -> (usize, usize) {
        let std = (2.0 / in_dim as f64).sqrt();
        let w = self.random_tensor(format!("{prefix}.weight"), vec![in_dim, out_dim], std);
        let b = self.constant(format!("{prefix}.bias"), vec![out_dim], 0.0);
        (w, b)
    }
}

impl AttentionResNet {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut b = Builder {
            names: Vec::new(),
            params: Vec::new(),
            stats: Vec::new(),
            rng: ChaCha12Rng::seed_from_u64(subseed(config.seed, tag::MODEL_INIT, 0)),
        };

        let [s0, s1] = config.stem_channels;
        let stem_conv1 = b.conv("stem.conv1".into(), [s0, 3, 3, 3]);
        let (stem_bn, stem_stats) = b.batch_norm("stem.bn", s0);
        let stem_conv2 = b.conv("stem.conv2".into(), [s1, s0, 3, 3]);

        let mut blocks = Vec::new();
        let mut c_in = s1;
        for (i, (&c_out, &stride)) in config
            .block_channels
            .iter()
            .zip(&config.block_strides)
            .enumerate()
        {
            let (bn1, stats1) = b.batch_norm(&format!("block{i}.bn1"), c_in);
            let conv1 = b.conv(format!("block{i}.conv1"), [c_out, c_in, 3, 3]);
            let (bn2, stats2) = b.batch_norm(&format!("block{i}.bn2"), c_out);
            let conv2 = b.conv(format!("block{i}.conv2"), [c_out, c_out, 3, 3]);
            let skip = (c_in != c_out || stride != 1)
                .then(|| b.conv(format!("block{i}.skip"), [c_out, c_in, 1, 1]));
            blocks.push(BlockIx {
                bn1,
                conv1,
                bn2,
                conv2,
                skip,
                stats1,
                stats2,
                stride,
            });
            c_in = c_out;
        }

        let (head_bn, head_stats) = b.batch_norm("head.bn", c_in);
        let attn_w = b.conv("attn.weight".into(), [1, c_in, 1, 1]);
        let (fc1_w, fc1_b) = b.linear("fc1", c_in, config.fc_widths[0]);
        let (fc2_w, fc2_b) = b.linear("fc2", config.fc_widths[0], config.fc_widths[1]);

        Ok(Self {
            ix: ParamIx {
                stem_conv1,
                stem_bn,
                stem_conv2,
                blocks,
                head_bn,
                attn_w,
                fc1_w,
                fc1_b,
                fc2_w,
                fc2_b,
                stem_stats,
                head_stats,
            },
            config,
            names: b.names,
            params: b.params,
            stats: b.stats,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &mut self.params[i])
    }

    pub fn bn_stats(&self) -> &[BnStats] {
        &self.stats
    }

    pub fn bn_stats_mut(&mut self) -> &mut [BnStats] {
        &mut self.stats
    }

    /// Replace a parameter tensor, checking the shape.
    pub(crate) fn set_param(&mut self, index: usize, tensor: Tensor) -> Result<(), ModelError> {
        if tensor.shape() != self.params[index].shape() {
            return Err(ModelError::CheckpointFormat(format!(
                "parameter {} has shape {:?}, expected {:?}",
                self.names[index],
                tensor.shape(),
                self.params[index].shape()
            )));
        }
        self.params[index] = tensor;
        Ok(())
    }

    fn check_batch(&self, batch: &Tensor) -> Result<(), ModelError> {
        let r = self.config.input_resolution;
        if batch.shape().len() != 4 || batch.shape()[1] != 3 || batch.shape()[2] != r || batch.shape()[3] != r
        {
            return Err(ModelError::ResolutionMismatch {
                expected: r,
                shape: batch.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Forward pass with batch statistics; updates running estimates.
    pub fn forward_train(&mut self, batch: &Tensor) -> Result<ForwardPass, ModelError> {
        self.check_batch(batch)?;
        assemble(
            &self.ix,
            &self.params,
            &mut self.stats,
            batch,
            BnMode::Train,
        )
        .map_err(ModelError::from)
    }

    /// Deterministic forward pass with running statistics; per-image outputs
    /// are independent of batch composition.
    pub fn forward_eval(&self, batch: &Tensor) -> Result<ForwardPass, ModelError> {
        self.check_batch(batch)?;
        let mut stats = self.stats.clone();
        assemble(&self.ix, &self.params, &mut stats, batch, BnMode::Eval).map_err(ModelError::from)
    }

    /// Eval-mode predictions and per-image attention grids.
    pub fn predict(&self, batch: &Tensor) -> Result<(Vec<f64>, Vec<AttentionWeights>), ModelError> {
        let pass = self.forward_eval(batch)?;
        let predictions = pass.graph.value(pass.predictions).data().to_vec();
        let attn = pass.graph.value(pass.attention);
        let side = self.config.feature_map_side();
        let positions = attn.shape()[1];
        let attention = attn
            .data()
            .chunks(positions)
            .map(|row| AttentionWeights {
                height: side,
                width: side,
                weights: row.to_vec(),
            })
            .collect();
        Ok((predictions, attention))
    }
}

/// Handles to one residual block's parameters inside a graph.
pub struct ResidualBlockNodes {
    pub bn1_gamma: NodeId,
    pub bn1_beta: NodeId,
    pub conv1: NodeId,
    pub bn2_gamma: NodeId,
    pub bn2_beta: NodeId,
    pub conv2: NodeId,
    /// 1x1 projection for the skip path; `None` keeps the identity skip.
    pub skip: Option<NodeId>,
    pub stride: usize,
}

/// Pre-activation residual block: out = skip(x) + conv(relu(bn(conv(relu(bn(x)))))).
pub fn residual_block(
    g: &mut Graph,
    x: NodeId,
    nodes: &ResidualBlockNodes,
    mode: BnMode,
    stats1: &mut BnStats,
    stats2: &mut BnStats,
) -> Result<NodeId, TensorError> {
    let h = g.batch_norm(x, nodes.bn1_gamma, nodes.bn1_beta, mode, stats1)?;
    let h = g.relu(h)?;
    let h = g.conv2d(h, nodes.conv1, nodes.stride, 1)?;
    let h = g.batch_norm(h, nodes.bn2_gamma, nodes.bn2_beta, mode, stats2)?;
    let h = g.relu(h)?;
    let h = g.conv2d(h, nodes.conv2, 1, 1)?;
    let skip = match nodes.skip {
        Some(w) => g.conv2d(x, w, nodes.stride, 0)?,
        None => x,
    };
    g.add(skip, h)
}

/// Soft spatial attention: a 1x1 convolution scores each position, softmax
/// normalizes the scores into weights, and the output is the weighted
/// average of the feature vectors. Returns (pooled [N,C], weights [N,P]).
///
/// A bias on the score convolution would be a no-op (softmax is invariant
/// under adding a constant), so there is none.
pub fn soft_attention_pool(
    g: &mut Graph,
    features: NodeId,
    score_kernel: NodeId,
) -> Result<(NodeId, NodeId), TensorError> {
    let logits = g.conv2d(features, score_kernel, 1, 0)?;
    let shape = g.value(logits).shape().to_vec();
    let (n, h, w) = (shape[0], shape[2], shape[3]);
    let flat = g.reshape(logits, vec![n, h * w])?;
    let weights = g.softmax(flat, 1)?;
    let pooled = g.attention_pool(features, weights)?;
    Ok((pooled, weights))
}

fn assemble(
    ix: &ParamIx,
    params: &[Tensor],
    stats: &mut [BnStats],
    batch: &Tensor,
    mode: BnMode,
) -> Result<ForwardPass, TensorError> {
    let mut g = Graph::new();
    let param_nodes: Vec<NodeId> = params
        .iter()
        .map(|p| g.leaf(p.clone().with_grad()))
        .collect();
    let p = |i: usize| param_nodes[i];
    let input = g.leaf(batch.clone());

    let mut x = g.conv2d(input, p(ix.stem_conv1), 2, 1)?;
    x = g.batch_norm(
        x,
        p(ix.stem_bn),
        p(ix.stem_bn + 1),
        mode,
        &mut stats[ix.stem_stats],
    )?;
    x = g.relu(x)?;
    x = g.conv2d(x, p(ix.stem_conv2), 2, 1)?;

    for block in &ix.blocks {
        let nodes = ResidualBlockNodes {
            bn1_gamma: p(block.bn1),
            bn1_beta: p(block.bn1 + 1),
            conv1: p(block.conv1),
            bn2_gamma: p(block.bn2),
            bn2_beta: p(block.bn2 + 1),
            conv2: p(block.conv2),
            skip: block.skip.map(&p),
            stride: block.stride,
        };
        let (left, right) = split_stats(stats, block.stats1, block.stats2);
        x = residual_block(&mut g, x, &nodes, mode, left, right)?;
    }

    x = g.batch_norm(
        x,
        p(ix.head_bn),
        p(ix.head_bn + 1),
        mode,
        &mut stats[ix.head_stats],
    )?;
    x = g.relu(x)?;

    let (pooled, attention) = soft_attention_pool(&mut g, x, p(ix.attn_w))?;
    let mut h = g.matmul(pooled, p(ix.fc1_w))?;
    h = g.add_row_bias(h, p(ix.fc1_b))?;
    h = g.relu(h)?;
    let mut out = g.matmul(h, p(ix.fc2_w))?;
    out = g.add_row_bias(out, p(ix.fc2_b))?;
    let n = batch.shape()[0];
    let predictions = g.reshape(out, vec![n])?;

    Ok(ForwardPass {
        graph: g,
        param_nodes,
        predictions,
        attention,
    })
}

fn split_stats(stats: &mut [BnStats], a: usize, b: usize) -> (&mut BnStats, &mut BnStats) {
    debug_assert!(a < b);
    let (lo, hi) = stats.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

/// Arithmetic mean of member predictions. Members must agree on target and
/// input resolution. Per-image sums are ordered by value, so the result is
/// exactly invariant under permutation of the members.
pub fn ensemble_predict(
    models: &[AttentionResNet],
    batch: &Tensor,
) -> Result<Vec<f64>, ModelError> {
    let first = models.first().ok_or(ModelError::EmptyEnsemble)?;
    for m in models {
        if m.config().target != first.config().target {
            return Err(ModelError::MixedEnsemble { field: "target" });
        }
        if m.config().input_resolution != first.config().input_resolution {
            return Err(ModelError::MixedEnsemble {
                field: "input_resolution",
            });
        }
    }
    let mut member_preds = Vec::with_capacity(models.len());
    for m in models {
        member_preds.push(m.predict(batch)?.0);
    }
    let n = member_preds[0].len();
    let k = models.len() as f64;
    let mut out = Vec::with_capacity(n);
    let mut column = vec![0.0; models.len()];
    for i in 0..n {
        for (slot, preds) in column.iter_mut().zip(&member_preds) {
            *slot = preds[i];
        }
        column.sort_unstable_by(f64::total_cmp);
        out.push(column.iter().sum::<f64>() / k);
    }
    Ok(out)
}
