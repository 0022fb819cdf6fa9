use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hiercause::eval::{kernel_r2, pairwise_matrix, R2Options};
use hiercause::par::Execution;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::hint::black_box;

fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
}

fn options(execution: Execution, budget: usize) -> R2Options {
    R2Options {
        budget,
        execution,
        ..R2Options::default()
    }
}

const MODES: [(&str, Execution); 2] = [("auto", Execution::Auto), ("sequential", Execution::Sequential)];

fn bench_kernel_r2(c: &mut Criterion) {
    let x = gaussian(4096, 4, 1);
    let y = x.mapv(f64::sin) + gaussian(4096, 4, 2) * 0.1;
    let mut group = c.benchmark_group("kernel_r2");
    group.sample_size(10);
    for budget in [1024, 4096] {
        for (name, exec) in MODES {
            let opts = options(exec, budget);
            group.bench_with_input(BenchmarkId::new(name, budget), &opts, |b, opts| {
                b.iter(|| kernel_r2(black_box(x.view()), black_box(y.view()), opts).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_pairwise_matrix(c: &mut Criterion) {
    let base = gaussian(2048, 2, 3);
    let blocks: Vec<(String, Array2<f64>)> = (0..4)
        .map(|i| (format!("v{i}"), base.mapv(|v| (v * (i + 1) as f64).tanh()) + gaussian(2048, 2, 10 + i) * 0.3))
        .collect();
    let views: Vec<_> = blocks.iter().map(|(id, a)| (id.clone(), a.view())).collect();
    let mut group = c.benchmark_group("pairwise_matrix");
    group.sample_size(10);
    for (name, exec) in MODES {
        let opts = options(exec, 2048);
        group.bench_function(name, |b| b.iter(|| pairwise_matrix(black_box(&views), &opts).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_kernel_r2, bench_pairwise_matrix);
criterion_main!(benches);
