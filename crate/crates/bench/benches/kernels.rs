use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dagf_core::guided::{Dagf, DagfConfig};
use dagf_core::kernels::conv::{conv2d_backward, depthwise_backward, depthwise_forward};
use dagf_core::kernels::{conv2d_forward, Conv2dSpec, PadMode};
use dagf_core::loss::{cobi, l1_loss, CobiConfig};
use dagf_core::{Graph, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d_3x3_16ch_64x128");
    let x = randn(&[1, 16, 64, 128], 1);
    let w = randn(&[16, 16, 3, 3], 2);
    let b = randn(&[16], 3);
    for dil in [1, 2, 4] {
        let spec = Conv2dSpec::same(3, dil).with_pad_mode(PadMode::Replicate);
        group.bench_with_input(BenchmarkId::new("forward", dil), &spec, |bch, spec| {
            bch.iter(|| conv2d_forward(black_box(&x), &w, Some(&b), None, spec).unwrap())
        });
        let gy = conv2d_forward(&x, &w, Some(&b), None, &spec).unwrap();
        group.bench_with_input(BenchmarkId::new("backward", dil), &spec, |bch, spec| {
            bch.iter(|| conv2d_backward(black_box(&x), &w, None, true, &gy, spec, true, true).unwrap())
        });
    }
    group.finish();
}

fn depthwise(c: &mut Criterion) {
    let x = randn(&[1, 16, 64, 128], 4);
    let k = randn(&[16, 1, 3, 3], 5);
    let gy = depthwise_forward(&x, &k, (1, 1), PadMode::Replicate).unwrap();
    c.bench_function("depthwise_3x3_16ch_64x128/forward", |b| {
        b.iter(|| depthwise_forward(black_box(&x), &k, (1, 1), PadMode::Replicate).unwrap())
    });
    c.bench_function("depthwise_3x3_16ch_64x128/backward", |b| {
        b.iter(|| depthwise_backward(black_box(&x), &k, &gy, (1, 1), PadMode::Replicate).unwrap())
    });
}

fn dagf(c: &mut Criterion) {
    let cfg = DagfConfig::tiny();
    let (model, store): (Dagf, ParamStore<f32>) = Dagf::build(&cfg, 0).unwrap();
    let x = randn(&[1, 3, 64, 128], 6).map(|v| v.tanh());
    let y = randn(&[1, 3, 64, 128], 7).map(|v| v.tanh());
    let mut group = c.benchmark_group("dagf_tiny_64x128");
    group.sample_size(10);
    group.bench_function("infer", |b| b.iter(|| model.infer(&store, black_box(&x), false).unwrap()));
    group.bench_function("train_step_grads", |b| {
        b.iter(|| {
            let mut g = Graph::new(&store);
            let (xv, yv) = (g.constant(x.clone()), g.constant(y.clone()));
            let pred = model.forward(&mut g, xv).unwrap();
            let loss = l1_loss(&mut g, pred, yv).unwrap();
            g.backward(loss).unwrap()
        })
    });
    group.finish();
}

fn cobi_loss(c: &mut Criterion) {
    let p = randn(&[1, 3, 16, 16], 8);
    let q = randn(&[1, 3, 16, 16], 9);
    let cfg = CobiConfig::default();
    c.bench_function("cobi_exhaustive_16x16", |b| b.iter(|| cobi(black_box(&p), &q, &cfg).unwrap()));
}

criterion_group!(benches, conv, depthwise, dagf, cobi_loss);
criterion_main!(benches);
