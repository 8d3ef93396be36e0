use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use inls_core::evolution::{self, EvolutionConfig, Scheme};
use inls_core::ground_state::{gaussian_seed, solve_gradient_flow, solve_shooting};
use inls_core::{build_grid, MeshKind, PhysicalParams};
use num_complex::Complex64;

fn setup(n: usize) -> (PhysicalParams, Arc<inls_core::RadialGrid>) {
    let params = PhysicalParams::new(3, 0.125, 1.0 + 4.0 / 3.0).unwrap();
    let grid = build_grid(&params, n, 30.0, MeshKind::GradedPower { gamma: 2.0 }).unwrap();
    (params, Arc::new(grid))
}

fn ground_state(c: &mut Criterion) {
    let mut group = c.benchmark_group("ground_state");
    group.sample_size(10);
    for n in [2048, 8192] {
        let (params, grid) = setup(n);
        group.bench_with_input(BenchmarkId::new("shooting", n), &n, |b, _| {
            b.iter(|| solve_shooting(&params, &grid).unwrap())
        });
        let seed = gaussian_seed(&grid);
        group.bench_with_input(BenchmarkId::new("gradient_flow", n), &n, |b, _| {
            b.iter(|| solve_gradient_flow(&params, &grid, &seed).unwrap())
        });
    }
    group.finish();
}

fn time_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("step");
    for n in [2048, 8192] {
        let (params, grid) = setup(n);
        let u = solve_shooting(&params, &grid).unwrap().field().scale(Complex64::new(0.9, 0.0));
        for scheme in [Scheme::StrangSplit, Scheme::Relaxation] {
            let cfg = EvolutionConfig { scheme, ..EvolutionConfig::default() };
            group.bench_with_input(BenchmarkId::new(format!("{scheme:?}"), n), &n, |b, _| {
                b.iter(|| evolution::step(black_box(&u), 1e-3, &params, &cfg).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, ground_state, time_step);
criterion_main!(benches);
