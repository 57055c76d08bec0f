use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ospde_bench::obstacle_problem;
use ospde_core::grid::build_grid;
use ospde_core::linalg::{solve_lcp, PgsSettings};
use ospde_core::noise::kl_build;
use ospde_core::operator::assemble_stiffness;
use ospde_core::{solve, CoefficientField, Kernel, Scheme};

fn stiffness(c: &mut Criterion) {
    let mut g = c.benchmark_group("assemble_stiffness");
    let a = CoefficientField::scalar_sin(&[1.0, 1.0]);
    for n in [17, 33, 65] {
        let grid = build_grid(2, &[1.0, 1.0], &[n, n]).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &grid, |b, grid| {
            b.iter(|| assemble_stiffness(&a, black_box(0.3), grid).unwrap())
        });
    }
    g.finish();
}

fn lcp(c: &mut Criterion) {
    let mut g = c.benchmark_group("projected_gauss_seidel");
    for n in [33, 129, 513] {
        let grid = build_grid(1, &[1.0], &[n]).unwrap();
        let op = assemble_stiffness(&CoefficientField::identity(), 0.0, &grid).unwrap();
        let m = op.matrix().shifted(1.0, 1e-3);
        let pts: Vec<f64> = grid.interior_nodes().iter().map(|&i| grid.point(i)[0]).collect();
        let rhs: Vec<f64> = pts.iter().map(|x| -0.1 * x).collect();
        let lower: Vec<f64> = pts.iter().map(|x| 0.2 * (std::f64::consts::PI * x).sin()).collect();
        let settings = PgsSettings::default();
        g.bench_function(BenchmarkId::from_parameter(n), |b| {
            b.iter(|| solve_lcp(&m, black_box(&rhs), &lower, &lower, &settings).unwrap())
        });
    }
    g.finish();
}

fn paths(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve_path");
    g.sample_size(20);
    for (dim, nodes) in [(1, 65), (2, 17)] {
        let p = obstacle_problem(dim, nodes, 50, 8);
        for scheme in [Scheme::Unconstrained, Scheme::Penalized { n: 1e3 }, Scheme::Projected] {
            let id = BenchmarkId::new(scheme.label(), format!("{dim}d-{nodes}"));
            g.bench_function(id, |b| b.iter(|| solve(&p, scheme, black_box(0)).unwrap()));
        }
    }
    g.finish();
}

fn karhunen_loeve(c: &mut Criterion) {
    let mut g = c.benchmark_group("kl_build");
    g.sample_size(10);
    for n in [33, 65, 129] {
        let grid = build_grid(1, &[1.0], &[n]).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &grid, |b, grid| {
            b.iter(|| kl_build(&Kernel::Exponential { length: 0.2 }, grid, 16).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, stiffness, lcp, paths, karhunen_loeve);
criterion_main!(benches);
