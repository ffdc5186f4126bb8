use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gradflow::geometry::{im2col_with, SamplingTriplet};
use gradflow::layers::{conv_forward_gemm_with, conv_forward_naive_with};
use gradflow::mnist::{Dataset, Split};
use gradflow::network::build_reference_net;
use gradflow::optim::train_step;
use gradflow::parallel::Execution;
use gradflow::tensor::{matmul_with, Matrix, Tensor4, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const POLICIES: [(&str, Execution); 2] = [("serial", Execution::Serial), ("parallel", Execution::Parallel)];

fn random(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = c.benchmark_group("matmul");
    for n in [64, 256] {
        let a = Matrix::new(n, n, random(&mut rng, n * n)).unwrap();
        let b = Matrix::new(n, n, random(&mut rng, n * n)).unwrap();
        for (name, exec) in POLICIES {
            g.bench_with_input(BenchmarkId::new(name, n), &n, |bench, _| {
                bench.iter(|| matmul_with(exec, &a, &b).unwrap())
            });
        }
    }
    g.finish();
}

/// First convolution of the reference net on a batch of 32.
fn conv_input(rng: &mut ChaCha8Rng) -> (Tensor4, Tensor4, Vector, SamplingTriplet) {
    let a = Tensor4::new(32, 1, 28, 28, random(rng, 32 * 784)).unwrap();
    let w = Tensor4::new(6, 1, 5, 5, random(rng, 150)).unwrap();
    (a, w, Vector::zeros(6), SamplingTriplet::new(5, 1, 0).unwrap())
}

fn im2col(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (a, _, _, t) = conv_input(&mut rng);
    let mut g = c.benchmark_group("im2col");
    for (name, exec) in POLICIES {
        g.bench_function(name, |bench| bench.iter(|| im2col_with(exec, &a, t).unwrap()));
    }
    g.finish();
}

fn conv_forward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (a, w, b, t) = conv_input(&mut rng);
    let mut g = c.benchmark_group("conv_forward");
    for (name, exec) in POLICIES {
        g.bench_function(BenchmarkId::new("gemm", name), |bench| {
            bench.iter(|| conv_forward_gemm_with(exec, &a, &w, &b, t).unwrap())
        });
        g.bench_function(BenchmarkId::new("naive", name), |bench| {
            bench.iter(|| conv_forward_naive_with(exec, &a, &w, &b, t).unwrap())
        });
    }
    g.finish();
}

fn training_step(c: &mut Criterion) {
    let data = Dataset::synthetic(Split::Train);
    let (x, y) = data.gather(&(0..32).collect::<Vec<_>>());
    let mut net = build_reference_net(0);
    c.bench_function("train_step/reference/32", |bench| bench.iter(|| train_step(&mut net, &x, &y, 1e-3).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = matmul, im2col, conv_forward, training_step
}
criterion_main!(benches);
