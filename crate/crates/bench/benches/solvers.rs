use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use cbfx_bench::{linear2d, representative_states};
use cbfx_core::partition::{classify_grid, Mode};
use cbfx_core::{adaptive, explicit, oracle};

fn point_solvers(c: &mut Criterion) {
    let spec = linear2d();
    let mut group = c.benchmark_group("point");
    for (name, x) in representative_states() {
        group.bench_function(BenchmarkId::new("explicit", name), |b| {
            b.iter(|| explicit::classify_and_solve(black_box(&spec), black_box(&x)))
        });
        group.bench_function(BenchmarkId::new("adaptive", name), |b| {
            b.iter(|| adaptive::classify_and_solve(black_box(&spec), black_box(&x)))
        });
        group.bench_function(BenchmarkId::new("oracle-standard", name), |b| {
            b.iter(|| oracle::solve_standard(black_box(&spec), black_box(&x)))
        });
        group.bench_function(BenchmarkId::new("oracle-adaptive", name), |b| {
            b.iter(|| oracle::solve_adaptive(black_box(&spec), black_box(&x)))
        });
    }
    group.finish();
}

fn grid_sweep(c: &mut Criterion) {
    let spec = linear2d();
    let mut group = c.benchmark_group("grid");
    group.sample_size(10);
    group.bench_function("standard-61x61", |b| {
        b.iter(|| classify_grid(black_box(&spec), Mode::Standard, &[61, 61]).unwrap())
    });
    group.bench_function("adaptive-61x61", |b| {
        b.iter(|| classify_grid(black_box(&spec), Mode::Adaptive, &[61, 61]).unwrap())
    });
    group.finish();
}

criterion_group!(benches, point_solvers, grid_sweep);
criterion_main!(benches);
