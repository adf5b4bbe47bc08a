use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use lrd_ustat::hermite::CoeffOptions;
use lrd_ustat::kernel::Kernel;
use lrd_ustat::limit_law::{fbm_resolution, simulate_fbm_with, uniform_grid};
use lrd_ustat::lrd_sim::{simulate_gaussian, LrdParams};
use lrd_ustat::ustat::{ustat_incremental_with, ustat_naive_with};
use lrd_ustat::verify::check_reduction_with;
use lrd_ustat::Execution;

const MODES: [Execution; 2] = [Execution::Sequential, Execution::Parallel];

fn label(exec: Execution) -> &'static str {
    match exec {
        Execution::Sequential => "sequential",
        Execution::Parallel => "parallel",
    }
}

fn data(n: usize) -> Vec<f64> {
    simulate_gaussian(&LrdParams::fgn(0.4).unwrap(), n, 1).unwrap().values
}

fn bench_ustat(c: &mut Criterion) {
    let kernel = Kernel::gaussian_bump();
    let mut group = c.benchmark_group("ustat_naive");
    group.sample_size(10);
    let x = data(200);
    for exec in MODES {
        group.bench_with_input(BenchmarkId::new(label(exec), 200), &x, |b, x| {
            b.iter(|| ustat_naive_with(black_box(x), &kernel, exec).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("ustat_incremental");
    group.sample_size(10);
    let x = data(4000);
    for exec in MODES {
        group.bench_with_input(BenchmarkId::new(label(exec), 4000), &x, |b, x| {
            b.iter(|| ustat_incremental_with(black_box(x), &kernel, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_fbm(c: &mut Criterion) {
    let grid = uniform_grid(256);
    let resolution = fbm_resolution(grid.len());
    let mut group = c.benchmark_group("simulate_fbm");
    group.sample_size(10);
    for exec in MODES {
        group.bench_function(BenchmarkId::new(label(exec), 500), |b| {
            b.iter(|| simulate_fbm_with(0.8, &grid, 500, 7, resolution, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_reduction(c: &mut Criterion) {
    let kernel = Kernel::gaussian_bump();
    let params = LrdParams::fgn(0.4).unwrap();
    let opts = CoeffOptions::default();
    let mut group = c.benchmark_group("check_reduction");
    group.sample_size(10);
    for exec in MODES {
        group.bench_function(BenchmarkId::new(label(exec), 1000), |b| {
            b.iter(|| check_reduction_with(&kernel, &params, &[1000], 32, 3, &opts, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_ustat, bench_fbm, bench_reduction);
criterion_main!(benches);
