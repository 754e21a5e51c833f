//! Gradient sweeps shared by the op-level checks and the acceptance suite.
//!
//! Every check compares the graph's backward pass against central finite
//! differences of a scalar projection of the op output. The projection
//! weights are random so index mix-ups cannot cancel out.

use dioptra_core::autodiff::{BnMode, BnStats, Graph, NodeId, Tensor};
use dioptra_core::model::{
    residual_block, soft_attention_pool, AttentionResNet, ModelConfig, ResidualBlockNodes, Target,
};
use dioptra_core::train::l1_loss;
use rand::Rng;

use super::{assert_partials_match, random_values, rng};

/// Reduce an op output to a scalar via a fixed random projection, using only
/// reshape + matmul.
fn project(g: &mut Graph, y: NodeId, proj: &[f64]) -> NodeId {
    let numel = g.value(y).numel();
    let flat = g.reshape(y, vec![1, numel]).expect("flatten");
    let w = g.leaf(Tensor::new(vec![numel, 1], proj.to_vec()).expect("projection"));
    let prod = g.matmul(flat, w).expect("project");
    g.reshape(prod, vec![]).expect("scalar")
}

/// Check d(projection(op))/d(input_i) for every input against central
/// finite differences.
pub fn check_op(
    what: &str,
    shapes: &[Vec<usize>],
    seed: u64,
    build: &dyn Fn(&mut Graph, &[NodeId]) -> NodeId,
) {
    let mut r = rng(seed);
    let values: Vec<Vec<f64>> = shapes
        .iter()
        .map(|s| random_values(&mut r, s.iter().product()))
        .collect();

    let loss_for = |vals: &[Vec<f64>], proj: &[f64]| -> f64 {
        let mut g = Graph::new();
        let leaves: Vec<NodeId> = shapes
            .iter()
            .zip(vals)
            .map(|(s, v)| g.leaf(Tensor::new(s.clone(), v.clone()).expect("leaf")))
            .collect();
        let y = build(&mut g, &leaves);
        let loss = project(&mut g, y, proj);
        g.value(loss).item().expect("scalar loss")
    };

    // Probe the output size for the projection.
    let out_numel = {
        let mut g = Graph::new();
        let leaves: Vec<NodeId> = shapes
            .iter()
            .zip(&values)
            .map(|(s, v)| g.leaf(Tensor::new(s.clone(), v.clone()).expect("leaf")))
            .collect();
        let y = build(&mut g, &leaves);
        g.value(y).numel()
    };
    let proj = random_values(&mut r, out_numel);

    // Analytic gradients in one backward pass.
    let mut g = Graph::new();
    let leaves: Vec<NodeId> = shapes
        .iter()
        .zip(&values)
        .map(|(s, v)| g.leaf(Tensor::new(s.clone(), v.clone()).expect("leaf").with_grad()))
        .collect();
    let y = build(&mut g, &leaves);
    let loss = project(&mut g, y, &proj);
    g.backward(loss).expect("backward");

    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = g.grad(*leaf).expect("leaf gradient").to_vec();
        let mut f = |x: &[f64]| {
            let mut vals = values.clone();
            vals[i] = x.to_vec();
            loss_for(&vals, &proj)
        };
        assert_partials_match(
            &mut f,
            &values[i],
            &analytic,
            &format!("{what} (seed {seed}) input {i}"),
        );
    }
}

pub fn sweep_conv2d(instances: u64) {
    for seed in 0..instances {
        check_op(
            "conv2d",
            &[vec![2, 3, 4, 4], vec![2, 3, 3, 3]],
            100 + seed,
            &|g, l| g.conv2d(l[0], l[1], 1, 0).unwrap(),
        );
        check_op(
            "conv2d strided padded",
            &[vec![2, 2, 5, 5], vec![3, 2, 3, 3]],
            200 + seed,
            &|g, l| g.conv2d(l[0], l[1], 2, 1).unwrap(),
        );
    }
}

pub fn sweep_batch_norm(instances: u64) {
    for seed in 0..instances {
        check_op(
            "batch_norm train",
            &[vec![4, 2, 3, 3], vec![2], vec![2]],
            300 + seed,
            &|g, l| {
                let mut stats = BnStats::new(2);
                g.batch_norm(l[0], l[1], l[2], BnMode::Train, &mut stats).unwrap()
            },
        );
        check_op(
            "batch_norm eval",
            &[vec![3, 2, 2, 2], vec![2], vec![2]],
            400 + seed,
            &|g, l| {
                let mut stats = BnStats {
                    mean: vec![0.3, -0.2],
                    var: vec![1.4, 0.7],
                };
                g.batch_norm(l[0], l[1], l[2], BnMode::Eval, &mut stats).unwrap()
            },
        );
    }
}

pub fn sweep_matmul(instances: u64) {
    for seed in 0..instances {
        check_op(
            "matmul",
            &[vec![3, 4], vec![4, 2]],
            500 + seed,
            &|g, l| g.matmul(l[0], l[1]).unwrap(),
        );
    }
}

pub fn sweep_elementwise(instances: u64) {
    for seed in 0..instances {
        check_op("relu", &[vec![2, 3, 2, 2]], 600 + seed, &|g, l| {
            g.relu(l[0]).unwrap()
        });
        check_op("abs", &[vec![7]], 700 + seed, &|g, l| g.abs(l[0]).unwrap());
        check_op(
            "add",
            &[vec![2, 5], vec![2, 5]],
            800 + seed,
            &|g, l| g.add(l[0], l[1]).unwrap(),
        );
        check_op(
            "sub",
            &[vec![3, 2], vec![3, 2]],
            900 + seed,
            &|g, l| g.sub(l[0], l[1]).unwrap(),
        );
        check_op(
            "add_row_bias",
            &[vec![3, 4], vec![4]],
            1000 + seed,
            &|g, l| g.add_row_bias(l[0], l[1]).unwrap(),
        );
    }
}

pub fn sweep_reductions(instances: u64) {
    for seed in 0..instances {
        check_op("mean_all", &[vec![3, 4]], 1100 + seed, &|g, l| {
            g.mean_all(l[0]).unwrap()
        });
        check_op("mean_axes", &[vec![2, 3, 4]], 1200 + seed, &|g, l| {
            g.mean_axes(l[0], &[0, 2]).unwrap()
        });
        check_op("sum_all", &[vec![6]], 1300 + seed, &|g, l| {
            g.sum_all(l[0]).unwrap()
        });
    }
}

pub fn sweep_softmax(instances: u64) {
    for seed in 0..instances {
        check_op("softmax axis 1", &[vec![3, 5]], 1400 + seed, &|g, l| {
            g.softmax(l[0], 1).unwrap()
        });
        check_op("softmax axis 0", &[vec![4, 2]], 1500 + seed, &|g, l| {
            g.softmax(l[0], 0).unwrap()
        });
    }
}

pub fn sweep_attention(instances: u64) {
    for seed in 0..instances {
        check_op(
            "attention_pool",
            &[vec![2, 3, 2, 2], vec![2, 4]],
            1600 + seed,
            &|g, l| {
                // Normalize the raw weights through softmax first so the
                // composite matches how the model uses the op.
                let w = g.softmax(l[1], 1).unwrap();
                g.attention_pool(l[0], w).unwrap()
            },
        );
        check_op(
            "soft_attention_pool",
            &[vec![2, 3, 2, 2], vec![1, 3, 1, 1]],
            1700 + seed,
            &|g, l| soft_attention_pool(g, l[0], l[1]).unwrap().0,
        );
    }
}

pub fn sweep_residual_block(instances: u64) {
    for seed in 0..instances {
        // Identity-skip block.
        check_op(
            "residual_block",
            &[
                vec![2, 3, 4, 4], // x
                vec![3],          // bn1 gamma
                vec![3],          // bn1 beta
                vec![3, 3, 3, 3], // conv1
                vec![3],          // bn2 gamma
                vec![3],          // bn2 beta
                vec![3, 3, 3, 3], // conv2
            ],
            1800 + seed,
            &|g, l| {
                let nodes = ResidualBlockNodes {
                    bn1_gamma: l[1],
                    bn1_beta: l[2],
                    conv1: l[3],
                    bn2_gamma: l[4],
                    bn2_beta: l[5],
                    conv2: l[6],
                    skip: None,
                    stride: 1,
                };
                let mut s1 = BnStats::new(3);
                let mut s2 = BnStats::new(3);
                residual_block(g, l[0], &nodes, BnMode::Train, &mut s1, &mut s2).unwrap()
            },
        );
        // Downsampling block with a 1x1 skip projection.
        check_op(
            "residual_block strided",
            &[
                vec![2, 2, 4, 4],
                vec![2],
                vec![2],
                vec![3, 2, 3, 3],
                vec![3],
                vec![3],
                vec![3, 3, 3, 3],
                vec![3, 2, 1, 1], // skip
            ],
            1900 + seed,
            &|g, l| {
                let nodes = ResidualBlockNodes {
                    bn1_gamma: l[1],
                    bn1_beta: l[2],
                    conv1: l[3],
                    bn2_gamma: l[4],
                    bn2_beta: l[5],
                    conv2: l[6],
                    skip: Some(l[7]),
                    stride: 2,
                };
                let mut s1 = BnStats::new(2);
                let mut s2 = BnStats::new(3);
                residual_block(g, l[0], &nodes, BnMode::Train, &mut s1, &mut s2).unwrap()
            },
        );
    }
}

pub fn sweep_l1_loss(instances: u64) {
    for seed in 0..instances {
        check_op(
            "l1_loss",
            &[vec![6], vec![6]],
            2000 + seed,
            &|g, l| l1_loss(g, l[0], l[1]).unwrap(),
        );
    }
}

/// Full tiny-config network: every parameter gradient of an L1 loss on a
/// 2-image batch against central finite differences.
pub fn check_full_network(seed: u64) {
    let config = ModelConfig::tiny(Target::SphericalEquivalent, seed);
    let mut model = AttentionResNet::new(config.clone()).unwrap();
    let r = config.input_resolution;
    let mut rr = rng(3000 + seed);
    let batch = Tensor::new(vec![2, 3, r, r], random_values(&mut rr, 2 * 3 * r * r)).unwrap();
    let targets: Vec<f64> = (0..2).map(|_| rr.random_range(-6.0..6.0)).collect();

    let loss_of = |model: &mut AttentionResNet| -> f64 {
        let mut pass = model.forward_train(&batch).unwrap();
        let t = pass
            .graph
            .leaf(Tensor::from_vec(targets.clone()).unwrap());
        let loss = l1_loss(&mut pass.graph, pass.predictions, t).unwrap();
        pass.graph.value(loss).item().unwrap()
    };

    // Analytic gradients.
    let mut pass = model.forward_train(&batch).unwrap();
    let t = pass.graph.leaf(Tensor::from_vec(targets.clone()).unwrap());
    let loss = l1_loss(&mut pass.graph, pass.predictions, t).unwrap();
    pass.graph.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = pass
        .param_nodes
        .iter()
        .map(|n| pass.graph.grad(*n).unwrap().to_vec())
        .collect();
    drop(pass);

    for (pi, analytic_pi) in analytic.iter().enumerate() {
        let base = model.params()[pi].data().to_vec();
        let name = model.param_names()[pi].clone();
        let mut f = |x: &[f64]| {
            model.params_mut()[pi].data_mut().copy_from_slice(x);
            loss_of(&mut model)
        };
        assert_partials_match(
            &mut f,
            &base,
            analytic_pi,
            &format!("network seed {seed}, {name}"),
        );
        model.params_mut()[pi].data_mut().copy_from_slice(&base);
    }
}

/// Run every sweep at the given instance count; used by the acceptance
/// criterion with its own timing budget.
pub fn full_sweep(instances: u64, network_instances: u64) {
    sweep_conv2d(instances);
    sweep_batch_norm(instances);
    sweep_matmul(instances);
    sweep_elementwise(instances);
    sweep_reductions(instances);
    sweep_softmax(instances);
    sweep_attention(instances);
    sweep_residual_block(instances);
    sweep_l1_loss(instances);
    for seed in 0..network_instances {
        check_full_network(seed);
    }
}
