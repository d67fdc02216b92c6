//! Benchmarks of the hot tree sweeps and the inner solver, comparing the
//! rayon lane against a single-thread pool. With `--no-default-features`
//! (the sequential fallback) both lanes run the plain iterator path.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use stochact::control::{minimize_j, ControlProblem, SolveOptions};
use stochact::dynamics::{backward_solve, forward_solve};
use stochact::grid::{Grid, Propagator, Scheme};
use stochact::par::run_with_threads;
use stochact::placement::compute_h;
use stochact::tree::{
    expected_sq_norm_terminal, NoiseCoefficient, TerminalField, TreeTopology,
};

struct Bundle {
    grid: Grid,
    tree: TreeTopology,
    prop: Propagator,
    noise: NoiseCoefficient,
    y0: Vec<f64>,
    beta: Vec<f64>,
    eta: TerminalField,
}

fn bundle(n: usize, steps: usize) -> Bundle {
    let grid = Grid::new(n, 1.0).unwrap();
    let tree = TreeTopology::binomial(steps, 0.1).unwrap();
    let prop = Propagator::new(&grid, tree.dt(), Scheme::ExactSpectral).unwrap();
    let noise = NoiseCoefficient::constant(1.0, steps, 2.0).unwrap();
    let y0: Vec<f64> = (0..n)
        .map(|i| (std::f64::consts::PI * grid.position(i)).sin())
        .collect();
    let beta: Vec<f64> = (0..n).map(|i| if i < n / 2 { 1.0 } else { 0.0 }).collect();
    let eta = TerminalField::from_fn(&tree, n, |leaf, i| {
        ((leaf + 1) as f64 * 0.37).sin() * (i + 1) as f64 / n as f64
    });
    Bundle {
        grid,
        tree,
        prop,
        noise,
        y0,
        beta,
        eta,
    }
}

fn bench_tree_sweeps(c: &mut Criterion) {
    let b32 = bundle(32, 10);

    let mut group = c.benchmark_group("backward_solve_n32_k10");
    group.sample_size(20);
    group.bench_function("parallel", |bch| {
        bch.iter(|| {
            black_box(backward_solve(
                &b32.grid, &b32.tree, &b32.prop, &b32.noise, &b32.beta, &b32.eta,
            ))
        })
    });
    group.bench_function("single_thread", |bch| {
        bch.iter(|| {
            run_with_threads(1, || {
                black_box(backward_solve(
                    &b32.grid, &b32.tree, &b32.prop, &b32.noise, &b32.beta, &b32.eta,
                ))
            })
        })
    });
    group.finish();

    let mut group = c.benchmark_group("forward_solve_n32_k10");
    group.sample_size(20);
    group.bench_function("parallel", |bch| {
        bch.iter(|| {
            black_box(forward_solve(
                &b32.grid, &b32.tree, &b32.prop, &b32.noise, &b32.beta, &b32.y0, None,
            ))
        })
    });
    group.bench_function("single_thread", |bch| {
        bch.iter(|| {
            run_with_threads(1, || {
                black_box(forward_solve(
                    &b32.grid, &b32.tree, &b32.prop, &b32.noise, &b32.beta, &b32.y0, None,
                ))
            })
        })
    });
    group.finish();

    let rec = backward_solve(&b32.grid, &b32.tree, &b32.prop, &b32.noise, &b32.beta, &b32.eta);
    let mut group = c.benchmark_group("actuation_profile_n32_k10");
    group.sample_size(20);
    group.bench_function("parallel", |bch| {
        bch.iter(|| black_box(compute_h(&b32.grid, &b32.tree, &rec)))
    });
    group.bench_function("single_thread", |bch| {
        bch.iter(|| run_with_threads(1, || black_box(compute_h(&b32.grid, &b32.tree, &rec))))
    });
    group.finish();

    let mut group = c.benchmark_group("expected_sq_norm_n32_k10");
    group.sample_size(20);
    group.bench_function("parallel", |bch| {
        bch.iter(|| black_box(expected_sq_norm_terminal(&b32.tree, &b32.grid, &b32.eta)))
    });
    group.bench_function("single_thread", |bch| {
        bch.iter(|| {
            run_with_threads(1, || {
                black_box(expected_sq_norm_terminal(&b32.tree, &b32.grid, &b32.eta))
            })
        })
    });
    group.finish();
}

fn bench_inner_solver(c: &mut Criterion) {
    let tiny = bundle(4, 2);
    let pb = ControlProblem::new(
        &tiny.grid,
        &tiny.tree,
        &tiny.prop,
        &tiny.noise,
        0.1,
        &tiny.y0,
        &tiny.beta,
        None,
    )
    .unwrap();
    let opts = SolveOptions::tight();
    let mut group = c.benchmark_group("minimize_j_tiny");
    group.sample_size(20);
    group.bench_function("parallel", |bch| {
        bch.iter(|| black_box(minimize_j(&pb, &opts, None)))
    });
    group.bench_function("single_thread", |bch| {
        bch.iter(|| run_with_threads(1, || black_box(minimize_j(&pb, &opts, None))))
    });
    group.finish();
}

criterion_group!(benches, bench_tree_sweeps, bench_inner_solver);
criterion_main!(benches);
