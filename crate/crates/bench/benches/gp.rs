use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use rand::Rng;
use rio_core::data_io::stream_rng;
use rio_core::exact_gp::lml_with_gradient;
use rio_core::kernels::{gram, GpInputs, KernelParams, KernelSelector};
use rio_core::mlp::{predict_all, MlpNetwork};
use rio_core::sparse_gp::{init_inducing, sparse_bound_with_gradient};

fn instance(n: usize, d: usize, seed: u64) -> (GpInputs, Vec<f64>) {
    let mut rng = stream_rng(seed, 1);
    let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let yh: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y: Vec<f64> = (0..n).map(|i| x[i * d].sin() + 0.5 * yh[i] + 0.1 * rng.random_range(-1.0..1.0)).collect();
    (GpInputs::from_parts(d, x, yh).unwrap(), y)
}

fn params() -> KernelParams {
    KernelParams::from_natural(1.0, &[1.0], 0.5, 1.0, 0.05)
}

fn bench_gram(c: &mut Criterion) {
    let mut g = c.benchmark_group("gram");
    for n in [100, 400] {
        let (pts, _) = instance(n, 6, 1);
        g.bench_with_input(BenchmarkId::from_parameter(n), &pts, |b, pts| {
            b.iter(|| gram(&params(), &KernelSelector::IO, black_box(pts), pts).unwrap())
        });
    }
    g.finish();
}

fn bench_exact_lml(c: &mut Criterion) {
    let mut g = c.benchmark_group("exact_lml_gradient");
    for n in [100, 300] {
        let (pts, y) = instance(n, 6, 2);
        g.bench_with_input(BenchmarkId::from_parameter(n), &(pts, y), |b, (pts, y)| {
            b.iter(|| lml_with_gradient(&params(), &KernelSelector::IO, black_box(pts), y).unwrap())
        });
    }
    g.finish();
}

fn bench_sparse_bound(c: &mut Criterion) {
    let mut g = c.benchmark_group("sparse_bound_gradient");
    for n in [500, 2000] {
        let (pts, y) = instance(n, 6, 3);
        let z = init_inducing(&pts, 50, 0).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &(pts, y), |b, (pts, y)| {
            b.iter(|| sparse_bound_with_gradient(&params(), &KernelSelector::IO, &z, black_box(pts), y).unwrap())
        });
    }
    g.finish();
}

fn bench_mlp_forward(c: &mut Criterion) {
    let mut rng = stream_rng(4, 2);
    let net = MlpNetwork::glorot(&[6, 64, 64, 1], &mut rng).unwrap();
    let x = DMatrix::from_fn(1000, 6, |_, _| rng.random_range(-2.0..2.0));
    c.bench_function("mlp_forward_1000", |b| b.iter(|| predict_all(&net, black_box(&x)).unwrap()));
}

criterion_group!(benches, bench_gram, bench_exact_lml, bench_sparse_bound, bench_mlp_forward);
criterion_main!(benches);
