use std::hint::black_box;

use anisolab::exponents::select_beta;
use anisolab::grid::p_laplacian_apply;
use anisolab::solver::solve_inner;
use anisolab::{ExponentData, Grid, GridField, ProblemSpec};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn bench_apply(c: &mut Criterion) {
    let mut group = c.benchmark_group("p_laplacian_apply");
    for res in [64usize, 256] {
        let grid = Grid::unit(2, res).unwrap();
        let u = GridField::from_fn_dirichlet(&grid, |x| (x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1])).sqrt());
        for p in [[2.0, 2.0], [2.0, 4.0]] {
            let e = ExponentData::new(p.to_vec()).unwrap();
            group.bench_with_input(BenchmarkId::new(format!("p={p:?}"), res), &u, |b, u| {
                b.iter(|| p_laplacian_apply(black_box(u), &e).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_inner(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_inner");
    group.sample_size(10);
    let grid = Grid::unit(2, 32).unwrap();
    let rhs = GridField::constant(&grid, 1.0);
    for p in [[2.0, 2.0], [2.0, 3.0]] {
        let e = ExponentData::new(p.to_vec()).unwrap();
        group.bench_function(format!("32x32 p={p:?}"), |b| {
            b.iter(|| solve_inner(black_box(&rhs), &e, 1e-8).unwrap())
        });
    }
    group.finish();
}

fn bench_select_beta(c: &mut Criterion) {
    let spec = ProblemSpec::mixed_power(vec![2.0, 3.0, 4.0], 10.0, 10.0).unwrap();
    c.bench_function("select_beta", |b| b.iter(|| select_beta(black_box(&spec)).unwrap()));
}

criterion_group!(benches, bench_apply, bench_inner, bench_select_beta);
criterion_main!(benches);
