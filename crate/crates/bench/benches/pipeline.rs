use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use snippetgraph_bench::{detection_pool, features, training_fixture};
use snippetgraph_core::gcnext::{gcnext_forward, BlockShape, GcnextParams};
use snippetgraph_core::graph::knn_semantic_edges;
use snippetgraph_core::postprocess::soft_nms;
use snippetgraph_core::sgalign::{enumerate_anchors, sgalign_forward};
use snippetgraph_core::tensor::no_grad;
use snippetgraph_core::train::{batch_loss, Adam};
use snippetgraph_core::{NmsMethod, TrainConfig};

fn graph(c: &mut Criterion) {
    let x = features(32, 100, 0);
    c.bench_function("knn L=100 C=32 K=3", |b| {
        b.iter(|| knn_semantic_edges(black_box(&x.data()), 32, 3).unwrap())
    });
    let params = GcnextParams::init(
        &mut ChaCha8Rng::seed_from_u64(0),
        BlockShape::new(32, 4, 4).unwrap(),
        true,
    );
    let edges = knn_semantic_edges(&x.data(), 32, 3).unwrap();
    c.bench_function("gcnext block C=32 L=100", |b| {
        b.iter(|| no_grad(|| gcnext_forward(black_box(&x), &edges, &params).unwrap()))
    });
    let anchors = enumerate_anchors(100, 64);
    c.bench_function("sgalign 4221 anchors", |b| {
        b.iter(|| no_grad(|| sgalign_forward(black_box(&x), &edges, &anchors, 16, 8).unwrap()))
    });
}

fn post(c: &mut Criterion) {
    let pool = detection_pool(4000, 0);
    c.bench_function("soft-nms 4000 to 100", |b| {
        b.iter_batched(
            || pool.clone(),
            |p| soft_nms(p, NmsMethod::default(), 100),
            BatchSize::LargeInput,
        )
    });
}

fn training(c: &mut Criterion) {
    let (model, samples) = training_fixture(16, 0);
    let cfg = TrainConfig::default();
    let batch: Vec<_> = samples.iter().take(cfg.batch_size).collect();
    let params = model.params();
    let mut adam = Adam::new(&params);
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("step batch=16", |b| {
        b.iter(|| {
            let loss = batch_loss(&model, &batch, &cfg).unwrap();
            model.zero_grad();
            loss.total.backward().unwrap();
            adam.step(&params, cfg.learning_rate(0));
        })
    });
    group.finish();
}

criterion_group!(benches, graph, post, training);
criterion_main!(benches);
