use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use dioptra_bench::{default_model_and_batch, random_tensor};
use dioptra_core::autodiff::{Graph, Tensor};
use dioptra_core::train::l1_loss;

fn conv2d_forward(c: &mut Criterion) {
    let input = random_tensor(vec![8, 16, 16, 16], 1);
    let kernel = random_tensor(vec![32, 16, 3, 3], 2);
    c.bench_function("conv2d forward 8x16x16x16 -> 32", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let x = g.leaf(black_box(input.clone()));
            let k = g.leaf(black_box(kernel.clone()));
            black_box(g.conv2d(x, k, 1, 1).unwrap())
        })
    });
}

fn conv2d_train_step(c: &mut Criterion) {
    let input = random_tensor(vec![8, 16, 16, 16], 3);
    let kernel = random_tensor(vec![32, 16, 3, 3], 4).with_grad();
    c.bench_function("conv2d forward+backward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let x = g.leaf(input.clone());
            let k = g.leaf(kernel.clone());
            let y = g.conv2d(x, k, 1, 1).unwrap();
            let loss = g.mean_all(y).unwrap();
            g.backward(loss).unwrap();
            black_box(g.grad(k).unwrap().len())
        })
    });
}

fn network_predict(c: &mut Criterion) {
    let (model, batch) = default_model_and_batch(8);
    c.bench_function("network predict batch 8 @ 64px", |b| {
        b.iter(|| black_box(model.predict(&batch).unwrap().0))
    });
}

fn network_train_step(c: &mut Criterion) {
    let (mut model, batch) = default_model_and_batch(8);
    let targets = Tensor::from_vec((0..8).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
    c.bench_function("network train step batch 8 @ 64px", |b| {
        b.iter(|| {
            let mut pass = model.forward_train(&batch).unwrap();
            let t = pass.graph.leaf(targets.clone());
            let loss = l1_loss(&mut pass.graph, pass.predictions, t).unwrap();
            pass.graph.backward(loss).unwrap();
            black_box(pass.graph.value(loss).item())
        })
    });
}

criterion_group!(
    benches,
    conv2d_forward,
    conv2d_train_step,
    network_predict,
    network_train_step
);
criterion_main!(benches);
