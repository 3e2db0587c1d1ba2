//! Sequential against rayon-parallel execution for the data-parallel loops.
//!
//! Built without the `parallel` feature both variants run sequentially, which
//! gives the baseline for the overhead of the policy dispatch itself.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use etaquot::gridpde::{residual_with, DirichletProblem, Domain, Grid, GridField, Rhs, BoundaryData};
use etaquot::harness::{sweep_with, SweepConfig, SweepSpec};
use etaquot::hypersurf::{radial_geometry_with, RadialGraph, SphereMesh, WarpModel};
use etaquot::{EtaParams, Exec, QuotientOp};

const POLICIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn sweep_bench(c: &mut Criterion) {
    let spec = SweepSpec {
        configs: vec![
            SweepConfig { n: 4, k: 3, l: 1, theta: 1.0, mu: 0.5 },
            SweepConfig { n: 5, k: 2, l: 1, theta: 1.0, mu: 1.0 },
        ],
        samples: 2000,
        ..SweepSpec::default()
    };
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_function(name, |b| b.iter(|| sweep_with(black_box(&spec), exec).unwrap()));
    }
    group.finish();
}

fn residual_bench(c: &mut Criterion) {
    let mut group = c.benchmark_group("residual");
    for (n, points) in [(2usize, 65usize), (3, 33)] {
        let op = QuotientOp::new(n, 2, 1).unwrap();
        let problem = DirichletProblem::new(
            op,
            EtaParams::flat(1.0, 1.0).unwrap(),
            Rhs::constant(1.0),
            BoundaryData::zero(),
            Domain::unit_ball(n),
        )
        .unwrap();
        let grid = Grid::new(Domain::unit_ball(n), points).unwrap();
        let u = GridField::from_fn(grid, |x| 0.5 * x.iter().map(|v| v * v).sum::<f64>() - 0.5);
        for (name, exec) in POLICIES {
            group.bench_with_input(BenchmarkId::new(name, format!("{n}d-{points}")), &u, |b, u| {
                b.iter(|| residual_with(&problem, u, 0.0, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn geometry_bench(c: &mut Criterion) {
    let mesh = SphereMesh::new(64, 128).unwrap();
    let graph = RadialGraph::from_fn(WarpModel::hyperbolic(), mesh, |z| 1.0 + 0.1 * z[0] * z[2]).unwrap();
    let mut group = c.benchmark_group("radial_geometry");
    for (name, exec) in POLICIES {
        group.bench_function(name, |b| b.iter(|| radial_geometry_with(black_box(&graph), exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, sweep_bench, residual_bench, geometry_bench);
criterion_main!(benches);
