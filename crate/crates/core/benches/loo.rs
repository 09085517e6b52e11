//! Naive LOO refits vs the spectral shortcut, each on one thread and on the
//! default rayon pool. Without the `parallel` feature both variants run
//! sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gdcv::loo::{loo_predictions_fast, loo_predictions_naive};
use gdcv::par::with_threads;
use gdcv::simgen::{generate, SimModel};
use gdcv::{spectral_decompose, StepSchedule};

fn threads() -> [(&'static str, usize); 2] {
    let all = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    [("sequential", 1), ("parallel", all)]
}

fn loo(c: &mut Criterion) {
    let sim = generate(&SimModel::isotropic_linear(150, 150, 1.0, 1.0, 0), 0).unwrap();
    let data = &sim.train;
    let schedule = StepSchedule::constant(0.01, 100).unwrap();

    let mut group = c.benchmark_group("loo_n150_p150_k100");
    group.sample_size(10);
    for (label, n_threads) in threads() {
        group.bench_function(BenchmarkId::new("naive", label), |b| {
            b.iter(|| {
                with_threads(n_threads, || {
                    loo_predictions_naive(black_box(data), &schedule, 100).unwrap()
                })
            })
        });
        group.bench_function(BenchmarkId::new("shortcut", label), |b| {
            b.iter(|| {
                with_threads(n_threads, || {
                    let cache = spectral_decompose(black_box(data), false).unwrap();
                    loo_predictions_fast(data, &schedule, 100, &cache).unwrap()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, loo);
criterion_main!(benches);
