use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use shardgrad::network::{backward, forward, LossKind};
use shardgrad::{DenseMatrix, Rng};
use shardgrad_bench::dense_fixture;

fn matrix_kernels(c: &mut Criterion) {
    let mut rng = Rng::new(1);
    let w = DenseMatrix::from_vec(784, 480, rng.uniform(-0.1, 0.1, 784 * 480).unwrap().into_inner()).unwrap();
    let x = rng.uniform(0.0, 1.0, 784).unwrap().into_inner();
    let d = rng.uniform(-1.0, 1.0, 480).unwrap().into_inner();
    c.bench_function("vec_mul 784x480", |b| b.iter(|| w.vec_mul(black_box(&x)).unwrap()));
    c.bench_function("mul_vec 784x480", |b| b.iter(|| w.mul_vec(black_box(&d)).unwrap()));
    let mut g = DenseMatrix::zeros(784, 480);
    c.bench_function("add_outer 784x480", |b| b.iter(|| g.add_outer(black_box(&x), black_box(&d)).unwrap()));
}

fn reference_passes(c: &mut Criterion) {
    let (spec, params, x, y) = dense_fixture(&[784, 480, 160, 10], 2);
    c.bench_function("forward 784-480-160-10", |b| b.iter(|| forward(&spec, &params, black_box(&x)).unwrap()));
    c.bench_function("forward+backward 784-480-160-10", |b| {
        b.iter(|| {
            let t = forward(&spec, &params, black_box(&x)).unwrap();
            backward(&spec, &params, &t, &y, LossKind::CrossEntropy).unwrap()
        })
    });
}

criterion_group!(benches, matrix_kernels, reference_passes);
criterion_main!(benches);
