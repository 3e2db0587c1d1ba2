use approx::assert_relative_eq;
use etaquot::etacalc::{evaluate, key_lemma_ratio, quotient_gradient, EtaParams};
use etaquot::harness::{fd_gradient, sample_gamma_k};
use etaquot::symcone::{cone_contains, quotient, sigma, sigma_of, Spectrum};
use etaquot::QuotientOp;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn sym(n: usize, f: impl Fn(usize, usize) -> f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |i, j| f(i.min(j), i.max(j)));
    (&m + m.transpose()) * 0.5
}

/// `∂Q/∂W_ij` by central differences, perturbing `W_ij` and `W_ji` together.
fn fd_first(op: QuotientOp, params: &EtaParams, w: &DMatrix<f64>, step: f64) -> DMatrix<f64> {
    let n = w.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        let value = |t: f64| {
            let mut p = w.clone();
            p[(i, j)] += t;
            if i != j {
                p[(j, i)] += t;
            }
            evaluate(op, params, &p).unwrap().value
        };
        let d = |h: f64| (value(h) - value(-h)) / (2.0 * h);
        let r = (4.0 * d(0.5 * step) - d(step)) / 3.0;
        if i == j {
            r
        } else {
            0.5 * r
        }
    })
}

#[test]
fn key_lemma_anchor() {
    let op = QuotientOp::new(3, 2, 1).unwrap();
    let params = EtaParams::newton();
    let r = key_lemma_ratio(op, &params, &Spectrum::new(vec![2.0, 1.0, 0.0]).unwrap()).unwrap();
    for (a, b) in r.f_diag.iter().zip([20.0, 26.0, 32.0]) {
        assert!((a - b / 36.0).abs() < 1e-12);
    }
    assert!((r.min_ratio - 20.0 / 78.0).abs() < 1e-12);

    // finite-difference oracle on W = diag(κ)
    let w = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 1.0, 0.0]));
    let fd = fd_first(op, &params, &w, 1e-3);
    for (i, b) in [20.0, 26.0, 32.0].iter().enumerate() {
        assert!((fd[(i, i)] - b / 36.0).abs() < 1e-9);
    }
}

#[test]
fn operator_derivative_matches_differences_near_multiple_eigenvalues() {
    let op = QuotientOp::new(4, 3, 1).unwrap();
    let params = EtaParams::new(1.0, 0.5, None).unwrap();
    let base = sym(4, |i, j| if i == j { 1.0 + i as f64 } else { 0.1 * (i + 2 * j) as f64 });
    for gap in [1e-1, 1e-4, 1e-7] {
        // two eigenvalues of W separated by `gap`
        let (vals, vecs) = etaquot::etacalc::sym_eigen_sorted(&base);
        let mut v = vals.clone();
        v[2] = v[1] + gap;
        let w = &vecs * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(v)) * vecs.transpose();
        let w = (&w + w.transpose()) * 0.5;
        let eval = evaluate(op, &params, &w).unwrap();
        let fd = fd_first(op, &params, &w, 1e-3);
        let scale = eval.f_first.amax();
        let err = (&eval.f_first - &fd).amax() / scale;
        assert!(err < 1e-6, "gap {gap}: {err:e}");

        // second directional derivative along B
        let b = sym(4, |i, j| ((i + 1) * (j + 2)) as f64 / 10.0 - 0.3);
        let q = |t: f64| evaluate(op, &params, &(&w + &b * t)).unwrap().value;
        let d2 = |h: f64| (q(h) - 2.0 * q(0.0) + q(-h)) / (h * h);
        let fd2 = (4.0 * d2(5e-4) - d2(1e-3)) / 3.0;
        let exact = eval.second_form(&b);
        assert!((exact - fd2).abs() < 1e-5 * exact.abs().max(1.0), "gap {gap}: {exact} vs {fd2}");
    }
}

#[test]
fn closed_form_gradient_on_sampled_points() {
    for (n, k, l) in [(3, 2, 1), (4, 3, 0), (5, 4, 2), (5, 5, 3)] {
        let op = QuotientOp::new(n, k, l).unwrap();
        for lam in sample_gamma_k(n, k, 3, 250).unwrap() {
            let g = quotient_gradient(op, lam.values());
            let fd = fd_gradient(|x| sigma_of(k, x) / sigma_of(l, x), lam.values(), 1e-5);
            let scale = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let err = g.iter().zip(&fd).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            assert!(err <= 1e-6 * scale, "{n},{k},{l}: {err:e}");
        }
    }
}

#[test]
fn sigma_examples() {
    let lam = Spectrum::new(vec![1.0, 2.0, 3.0]).unwrap();
    assert_eq!(sigma(0, &lam).unwrap(), 1.0);
    assert_eq!(sigma(1, &lam).unwrap(), 6.0);
    assert_eq!(sigma(2, &lam).unwrap(), 11.0);
    assert_eq!(sigma(3, &lam).unwrap(), 6.0);
    assert!(sigma(4, &lam).is_err());
    let bad = Spectrum::new(vec![-3.0, 1.0, 1.0]).unwrap();
    assert!(quotient(QuotientOp::new(3, 2, 1).unwrap(), &bad).is_err());
}

proptest! {
    #[test]
    fn quotient_is_homogeneous(v in prop::collection::vec(0.05f64..3.0, 4), t in 0.2f64..5.0) {
        let op = QuotientOp::new(4, 3, 1).unwrap();
        let lam = Spectrum::new(v.clone()).unwrap();
        let q = quotient(op, &lam).unwrap();
        let qt = quotient(op, &lam.scaled(t).unwrap()).unwrap();
        prop_assert!((qt - t.powi(2) * q).abs() <= 1e-12 * qt.abs());
    }

    #[test]
    fn cones_are_nested(v in prop::collection::vec(-2.0f64..3.0, 5)) {
        let lam = Spectrum::new(v).unwrap();
        for k in 2..=5 {
            if cone_contains(k, &lam).unwrap().inside {
                prop_assert!(cone_contains(k - 1, &lam).unwrap().inside);
            }
        }
    }

    #[test]
    fn positive_cone_gradient_is_positive(v in prop::collection::vec(0.01f64..4.0, 5), k in 1usize..=5) {
        let l = k - 1;
        let op = QuotientOp::new(5, k, l).unwrap();
        prop_assert!(quotient_gradient(op, &v).iter().all(|g| *g > 0.0));
    }

    #[test]
    fn transform_is_equivariant(theta in 0.5f64..2.0, frac in 0.0f64..1.0, angle in 0.0f64..6.3) {
        let params = EtaParams::new(theta, theta * frac, None).unwrap();
        let op = QuotientOp::new(3, 1, 0).unwrap();
        let w = sym(3, |i, j| if i == j { 1.0 + 0.5 * i as f64 } else { 0.2 });
        let (c, s) = (angle.cos(), angle.sin());
        let rot = DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]);
        let a = evaluate(op, &params, &w).unwrap().value;
        let b = evaluate(op, &params, &(&rot * &w * rot.transpose())).unwrap().value;
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }
}
