use std::f64::consts::PI;
use std::time::Instant;

use approx::assert_relative_eq;
use etaquot::expr::Expr;
use etaquot::gridpde::{Domain, Grid, GridField};
use etaquot::hypersurf::*;
use etaquot::{Exec, QuotientOp};

fn mesh(n: usize) -> SphereMesh {
    SphereMesh::new(n, 2 * n).unwrap()
}

fn warps() -> Vec<(WarpModel, f64)> {
    vec![
        (WarpModel::euclidean(), 2.0),
        (WarpModel::spherical(), PI / 4.0),
        (WarpModel::hyperbolic(), 0.7),
    ]
}

fn n2_ops() -> Vec<QuotientOp> {
    vec![QuotientOp::new(2, 1, 0).unwrap(), QuotientOp::new(2, 2, 0).unwrap(), QuotientOp::new(2, 2, 1).unwrap()]
}

#[test]
fn constant_graphs_match_the_sphere_oracle() {
    for (warp, r0) in warps() {
        let g = RadialGraph::constant(warp.clone(), mesh(12), r0).unwrap();
        let geo = radial_geometry(&g).unwrap();
        let h = warp.h(r0).unwrap();
        for node in &geo.nodes {
            for k in &node.kappa {
                assert!((k - h).abs() <= 1e-12 * h.max(1.0));
            }
        }
        for op in n2_ops() {
            let oracle = sphere_oracle(&warp, r0, op).unwrap();
            for q in geo.quotient_values(op).unwrap() {
                assert!((q.unwrap() - oracle).abs() <= 1e-10, "{} {op:?}", warp.name());
            }
        }
    }
}

#[test]
fn sphere_oracle_closed_forms() {
    let e = WarpModel::euclidean();
    assert_relative_eq!(sphere_oracle(&e, 2.0, QuotientOp::new(3, 2, 1).unwrap()).unwrap(), 1.0, epsilon = 1e-15);
    assert_relative_eq!(sphere_oracle(&e, 1.6, QuotientOp::new(2, 1, 0).unwrap()).unwrap(), 2.0 / 1.6, epsilon = 1e-15);
    let s = WarpModel::spherical();
    assert_relative_eq!(sphere_oracle(&s, PI / 4.0, QuotientOp::new(2, 1, 0).unwrap()).unwrap(), 2.0, epsilon = 1e-14);
}

#[test]
fn eta_is_the_newton_transform_of_kappa() {
    let g = RadialGraph::from_fn(WarpModel::euclidean(), mesh(16), |z| 2.0 + 0.1 * (z[0] * z[2] + 0.5 * z[1])).unwrap();
    let geo = radial_geometry(&g).unwrap();
    for node in &geo.nodes {
        let total: f64 = node.kappa.iter().sum();
        for (e, k) in node.eta.iter().zip(&node.kappa) {
            assert!((e - (total - k)).abs() < 1e-10);
        }
        let eta_sum: f64 = node.eta.iter().sum();
        assert!((eta_sum - total).abs() < 1e-10);
        assert!(node.tau > 0.0);
    }
}

/// A Euclidean sphere of radius R centred off the origin is a radial graph
/// with both principal curvatures 1/R.
#[test]
fn off_centre_sphere_has_curvature_one_over_radius() {
    let c = [0.3, 0.1, -0.2];
    let radius = 2.0;
    let f = |z: [f64; 3]| {
        let zc = z[0] * c[0] + z[1] * c[1] + z[2] * c[2];
        let cc = c.iter().map(|v| v * v).sum::<f64>();
        zc + (zc * zc - cc + radius * radius).sqrt()
    };
    // second order away from the poles, first order on the pole rows
    let (mut band, mut all) = (Vec::new(), Vec::new());
    for n in [16, 32, 64] {
        let m = mesh(n);
        let geo = radial_geometry(&RadialGraph::from_fn(WarpModel::euclidean(), m, f).unwrap()).unwrap();
        let err = |keep: &dyn Fn(f64) -> bool| {
            geo.nodes
                .iter()
                .filter(|node| keep(m.colatitude(node.node)))
                .flat_map(|node| node.kappa.iter().map(|k| (k - 1.0 / radius).abs()))
                .fold(0.0, f64::max)
        };
        band.push(err(&|t| (PI / 4.0..=3.0 * PI / 4.0).contains(&t)));
        all.push(err(&|_| true));
    }
    assert!(band[0] / band[1] > 3.5 && band[1] / band[2] > 3.5, "{band:?}");
    assert!(all[0] / all[1] > 1.8 && all[1] / all[2] > 1.8, "{all:?}");
    assert!(all[2] < 2e-3);
}

#[test]
fn graph_geometry_closed_forms() {
    // paraboloid vertex
    let u = GridField::from_fn(Grid::new(Domain::unit_ball(2), 9).unwrap(), |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
    let origin = u.grid.nearest(&[0.0, 0.0]);
    let node = graph_geometry_at(&u, origin).unwrap();
    assert_relative_eq!(node.kappa[0], 1.0, epsilon = 1e-12);
    assert_relative_eq!(node.kappa[1], 1.0, epsilon = 1e-12);
    assert_eq!(node.nu_top, Some(1.0));

    // flat graph
    let flat = GridField::from_fn(Grid::new(Domain::unit_ball(3), 7).unwrap(), |_| 0.7);
    for node in graph_geometry(&flat).unwrap().nodes {
        assert!(node.kappa.iter().chain(&node.eta).all(|v| *v == 0.0));
        assert_eq!(node.nu_top, Some(1.0));
    }

    // boundary ring has no stencil
    let boundary = u.grid.boundary()[0];
    assert!(graph_geometry_at(&u, boundary).is_err());
}

#[test]
fn quadratic_graph_vertex_curvatures_are_its_eigenvalues() {
    let a = [[1.5, 0.4, 0.0], [0.4, -0.3, 0.2], [0.0, 0.2, 0.8]];
    let u = GridField::from_fn(Grid::new(Domain::unit_ball(3), 9).unwrap(), move |x| {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += 0.5 * a[i][j] * x[i] * x[j];
            }
        }
        s
    });
    let node = graph_geometry_at(&u, u.grid.nearest(&[0.0, 0.0, 0.0])).unwrap();
    let m = nalgebra::DMatrix::from_fn(3, 3, |i, j| a[i][j]);
    let mut eig: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    for (k, e) in node.kappa.iter().zip(eig) {
        assert_relative_eq!(*k, e, epsilon = 1e-12);
    }
}

/// At |x| = 1 on u = |x|²/2 the rotational formulas give
/// κ_rad = 1/2^{3/2} and κ_ang = 1/√2.
#[test]
fn paraboloid_rotational_curvatures() {
    let mut errs = Vec::new();
    for pts in [33, 65, 129] {
        let grid = Grid::new(Domain::Box { lo: vec![-2.0, -2.0], hi: vec![2.0, 2.0] }, pts).unwrap();
        let u = GridField::from_fn(grid, |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
        let node = graph_geometry_at(&u, u.grid.nearest(&[1.0, 0.0])).unwrap();
        assert_relative_eq!(node.nu_top.unwrap(), 0.5f64.sqrt(), epsilon = 1e-12);
        let rad = 1.0 / 2f64.powf(1.5);
        let ang = 1.0 / 2f64.sqrt();
        errs.push((node.kappa[0] - ang).abs().max((node.kappa[1] - rad).abs()));
    }
    // differences are exact on quadratics
    assert!(errs.iter().all(|e| *e < 1e-12), "{errs:?}");

    // u = s²/2 + s⁴/8: u′(1) = 3/2, u″(1) = 5/2
    let mut errs = Vec::new();
    for pts in [33, 65, 129] {
        let grid = Grid::new(Domain::Box { lo: vec![-2.0, -2.0], hi: vec![2.0, 2.0] }, pts).unwrap();
        let u = GridField::from_fn(grid, |x| {
            let s2 = x[0] * x[0] + x[1] * x[1];
            0.5 * s2 + s2 * s2 / 8.0
        });
        let node = graph_geometry_at(&u, u.grid.nearest(&[0.0, 1.0])).unwrap();
        let w: f64 = 1.0 + 2.25;
        let rad = 2.5 / w.powf(1.5);
        let ang = 1.5 / w.sqrt();
        errs.push((node.kappa[0] - ang).abs().max((node.kappa[1] - rad).abs()));
    }
    assert!(errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5, "{errs:?}");
}

fn perturbed(z: [f64; 3]) -> f64 {
    2.0 + 0.1 * (z[0] * z[2] + 0.5 * z[1])
}

#[test]
fn support_identities_vanish_on_spheres() {
    for (warp, r0) in warps() {
        let rep = verify_support_identities(&RadialGraph::constant(warp, mesh(16), r0).unwrap()).unwrap();
        for (name, v) in &rep.residuals {
            assert!(v.unwrap() < 1e-10, "{name} {v:?}");
        }
    }
}

#[test]
fn support_identities_converge_on_a_perturbed_graph() {
    for (warp, base) in warps() {
        let f = |z: [f64; 3]| perturbed(z) - 2.0 + base;
        let ladder = support_ladder(&warp, &[mesh(16), mesh(32), mesh(64)], f).unwrap();
        println!("{}\n{}", warp.name(), ladder.to_csv());
        for name in ladder.names() {
            assert!(ladder.min_ratio(&name) >= 2.0, "{} {name}: {:?}", warp.name(), ladder.series(&name));
        }
    }
}

#[test]
fn custom_warp_skips_the_curvature_identity() {
    let warp = WarpModel::parse("r + 0.1*r^3", Some(0.5), Some(3.0)).unwrap();
    let g = RadialGraph::from_fn(warp, mesh(16), perturbed).unwrap();
    let rep = verify_support_identities(&g).unwrap();
    assert_eq!(rep.get(HESS_TAU), None);
    assert_eq!(rep.skipped.len(), 1);
    assert!(rep.get(HESS_PHI).is_some());
}

#[test]
fn commutator_converges_on_a_cubic_perturbation() {
    let f = |x: &[f64]| 0.5 * (x[0] * x[0] + x[1] * x[1]) + 0.02 * x[0].powi(3);
    let ladder = commutator_ladder(&Domain::unit_ball(2), &[17, 33, 65], f).unwrap();
    println!("{}", ladder.to_csv());
    for name in [CODAZZI, COMMUTATOR] {
        assert!(ladder.min_ratio(name) >= 2.0, "{name}: {:?}", ladder.series(name));
    }
}

#[test]
fn commutator_on_the_paraboloid_is_second_order() {
    let f = |x: &[f64]| 0.5 * (x[0] * x[0] + x[1] * x[1]);
    let ladder = commutator_ladder(&Domain::unit_ball(2), &[17, 33, 65], f).unwrap();
    for name in [CODAZZI, COMMUTATOR] {
        assert!(ladder.orders(name).iter().all(|o| *o > 1.8), "{name}: {:?}", ladder.series(name));
    }
}

#[test]
fn commutator_in_three_dimensions() {
    let f = |x: &[f64]| 0.5 * (x[0] * x[0] + 0.5 * x[1] * x[1] + x[2] * x[2]) + 0.05 * x[0] * x[1] * x[2];
    let ladder = commutator_ladder(&Domain::unit_ball(3), &[17, 33], f).unwrap();
    for name in [CODAZZI, COMMUTATOR] {
        assert!(ladder.min_ratio(name) >= 2.0, "{name}: {:?}", ladder.series(name));
    }
}

#[test]
fn normal_component_identity_converges() {
    let para = |x: &[f64]| 0.5 * (x[0] * x[0] + x[1] * x[1]);
    let radial = |x: &[f64]| {
        let r2 = x[0] * x[0] + x[1] * x[1];
        0.5 * r2 + r2 * r2 / 8.0
    };
    for op in [QuotientOp::new(2, 1, 0).unwrap(), QuotientOp::new(2, 2, 1).unwrap()] {
        for f in [&para as &dyn Fn(&[f64]) -> f64, &radial] {
            let ladder = suw_ladder(&Domain::unit_ball(2), &[17, 33, 65], f, op, 0.0).unwrap();
            println!("{op:?}\n{}", ladder.to_csv());
            assert!(ladder.min_ratio(SUW) >= 2.0, "{:?}", ladder.series(SUW));
        }
    }
}

#[test]
fn normal_component_identity_on_a_flat_graph() {
    let op = QuotientOp::new(2, 2, 1).unwrap();
    let u = GridField::from_fn(Grid::new(Domain::unit_ball(2), 17).unwrap(), |_| 0.0);
    assert!(verify_suw_identity(&u, op).is_err());
    for eps in [1e-1, 1e-3, 1e-6] {
        let rep = verify_suw_identity_eps(&u, op, eps).unwrap();
        assert_eq!(rep.get(SUW), Some(0.0));
    }
}

#[test]
fn desk_instance_converges_to_the_radius_two_sphere() {
    let psi = Expr::parse("(2 + 0.1*(2 - r))/r").unwrap();
    let warp = WarpModel::euclidean();
    let cfg = RadialSolveConfig::default();
    let start = RadialGraph::from_fn(warp.clone(), mesh(32), |z| 1.6 + 0.15 * z[2] + 0.1 * z[0] * z[1]).unwrap();
    let t = Instant::now();
    let sol = radial_solve_report(&warp, &psi, 1.0, 3.0, &cfg, Some(start)).unwrap().into_result().unwrap();
    println!("{}", sol.history_csv());
    assert!(t.elapsed().as_secs_f64() < 30.0);
    assert!(sol.residual_sup() < 1e-8);
    assert!(sol.max_deviation(2.0) < 1e-6, "{}", sol.max_deviation(2.0));
    assert!(!sol.left_band);
    assert!(sol.history.len() > 2);
}

#[test]
fn desk_instance_from_the_default_start() {
    let psi = Expr::parse("(2 + 0.1*(2 - r))/r").unwrap();
    let cfg = RadialSolveConfig { initial: Some(1.3), ..Default::default() };
    let sol = radial_solve(&WarpModel::euclidean(), &psi, 1.0, 3.0, &cfg).unwrap();
    assert!(sol.max_deviation(2.0) < 1e-6);
}

#[test]
fn exact_sphere_is_a_fixed_point() {
    let psi = Expr::parse("2/1.5").unwrap();
    let warp = WarpModel::euclidean();
    let start = RadialGraph::constant(warp.clone(), mesh(16), 1.5).unwrap();
    // r·Ψ increases for constant Ψ, so the barrier test cannot pass.
    let op = QuotientOp::new(2, 1, 0).unwrap();
    assert!(!barrier_check(&warp, &psi, 1.0, 2.0, op).unwrap().passed());
    let sol = radial_newton(&warp, &psi, 1.0, 2.0, &RadialSolveConfig::default(), start).unwrap();
    assert!(sol.converged);
    assert_eq!(sol.history.len(), 1);
    assert!(sol.max_deviation(1.5) == 0.0);
}

#[test]
fn spherical_desk_instance() {
    let psi = Expr::parse("2*cos(r)/sin(r)*(1 + 0.05*(pi/4 - r))").unwrap();
    let warp = WarpModel::spherical();
    let start = RadialGraph::from_fn(warp.clone(), mesh(16), |z| PI / 4.0 + 0.1 * z[2]).unwrap();
    let sol = radial_solve_report(&warp, &psi, PI / 8.0, 3.0 * PI / 8.0, &RadialSolveConfig::default(), Some(start))
        .unwrap()
        .into_result()
        .unwrap();
    assert!(sol.max_deviation(PI / 4.0) < 1e-6);
}

#[test]
fn barrier_violation_stops_the_solver() {
    let psi = Expr::parse("1").unwrap();
    let err = radial_solve(&WarpModel::euclidean(), &psi, 1.0, 3.0, &RadialSolveConfig::default()).unwrap_err();
    assert!(matches!(err, etaquot::Error::Barrier(_)));
}

#[test]
fn geometry_is_independent_of_the_execution_policy() {
    let g = RadialGraph::from_fn(WarpModel::hyperbolic(), mesh(16), |z| 1.0 + 0.1 * z[0]).unwrap();
    let a = radial_geometry_with(&g, Exec::Sequential).unwrap().to_csv();
    let b = radial_geometry_with(&g, Exec::Parallel).unwrap().to_csv();
    assert_eq!(a, b);
}

#[test]
fn csv_headers() {
    let g = RadialGraph::constant(WarpModel::euclidean(), mesh(4), 2.0).unwrap();
    assert!(g.to_csv().starts_with("node,lat,lon,r\n"));
    let geo = radial_geometry(&g).unwrap().to_csv();
    assert!(geo.starts_with("node,lat,lon,r,kappa1,kappa2,eta1,eta2,tau,big_phi\n"));
    let u = GridField::from_fn(Grid::new(Domain::unit_ball(2), 5).unwrap(), |_| 0.0);
    assert!(graph_geometry(&u).unwrap().to_csv().starts_with("node,x1,x2,u,kappa1,kappa2,eta1,eta2,nu_top,tau,big_phi\n"));
}
