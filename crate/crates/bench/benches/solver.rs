use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use netimpute::{fixed_point_oracle, make_grid, run_imputation, GridSpec, ImputeConfig, UpdateScheme};
use netimpute_bench::{fixture, SIZES};

fn grid(c: &mut Criterion) {
    let g = make_grid(&GridSpec::default()).unwrap();
    let mut group = c.benchmark_group("grid_10x10");
    for scheme in [UpdateScheme::InPlace, UpdateScheme::Synchronous] {
        let cfg = ImputeConfig {
            max_epochs: 10_000,
            scheme,
            ..ImputeConfig::default()
        };
        group.bench_function(format!("{scheme:?}"), |b| {
            b.iter(|| run_imputation(&g.net, black_box(&g.states), &cfg).unwrap())
        });
    }
    group.finish();
}

fn random_networks(c: &mut Criterion) {
    let cfg = ImputeConfig::default();
    let mut group = c.benchmark_group("random_fixture");
    group.sample_size(10);
    for n in SIZES {
        let f = fixture(n);
        group.bench_with_input(BenchmarkId::new("iterative", n), &f, |b, f| {
            b.iter(|| run_imputation(&f.net, black_box(&f.states), &cfg).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("oracle", n), &f, |b, f| {
            b.iter(|| fixed_point_oracle(&f.net, black_box(&f.states)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, grid, random_networks);
criterion_main!(benches);
