use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use shardgrad::{ExchangeMode, LossKind, MpConfig, MpEngine, OptimizerKind};
use shardgrad_bench::{dense_fixture, wide_sizes};

fn mp_step(c: &mut Criterion) {
    let (spec, params, x, y) = dense_fixture(&[784, 480, 160, 10], 3);
    let mut group = c.benchmark_group("mp train_step 784-480-160-10");
    for f in [1, 2, 4] {
        let mut engine = MpEngine::new(&spec, &params, MpConfig::new(f, ExchangeMode::Hypercube), OptimizerKind::Sgd).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(f), &f, |b, _| {
            b.iter(|| engine.train_step(&x, &y, LossKind::CrossEntropy, 0.01).unwrap())
        });
    }
    group.finish();
}

fn wide_scaling(c: &mut Criterion) {
    let (spec, params, x, y) = dense_fixture(&wide_sizes(10_000_000), 4);
    let mut group = c.benchmark_group("mp train_step 1e7 params");
    group.sample_size(10);
    for f in [1, 4] {
        let mut engine = MpEngine::new(&spec, &params, MpConfig::new(f, ExchangeMode::Hypercube), OptimizerKind::Sgd).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(f), &f, |b, _| {
            b.iter(|| engine.train_step(&x, &y, LossKind::CrossEntropy, 0.01).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, mp_step, wide_scaling);
criterion_main!(benches);
