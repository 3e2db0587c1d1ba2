//! The transform `U = θ tr(W) I − μ W + χ` and derivative calculus of the
//! quotient `Q = σ_k/σ_l` composed with it.
//!
//! Two derivative families appear throughout:
//!
//! * `G^{ii} = ∂Q/∂λ_i`, derivatives against the transformed eigenvalues;
//! * `F^{ij} = ∂Q/∂W_ij`, derivatives against the untransformed matrix.
//!
//! They are linked by `F = θ tr(G) I − μ G` where `G` is the gradient matrix
//! `P diag(G^{ii}) Pᵀ` in the eigenframe `P` of `U`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::symcone::{require_cone, sigma_of, sigma_skip, QuotientOp, Spectrum};

const NONE: usize = usize::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct EtaParams {
    pub theta: f64,
    pub mu: f64,
    /// Symmetric offset; `None` means zero.
    pub chi: Option<DMatrix<f64>>,
}

impl EtaParams {
    pub fn new(theta: f64, mu: f64, chi: Option<DMatrix<f64>>) -> Result<Self> {
        if !(theta > 0.0) || !(theta >= mu) || !mu.is_finite() || !theta.is_finite() {
            return Err(Error::Domain(format!(
                "need theta >= mu and theta > 0, got theta={theta}, mu={mu}"
            )));
        }
        if let Some(c) = &chi {
            check_symmetric(c, "chi")?;
        }
        Ok(Self { theta, mu, chi })
    }

    /// `θ = μ = 1`, `χ = 0`: the first Newton transformation `σ_1(W) I − W`.
    pub fn newton() -> Self {
        Self {
            theta: 1.0,
            mu: 1.0,
            chi: None,
        }
    }

    pub fn flat(theta: f64, mu: f64) -> Result<Self> {
        Self::new(theta, mu, None)
    }

    pub fn has_offset(&self) -> bool {
        self.chi.as_ref().is_some_and(|c| c.iter().any(|&v| v != 0.0))
    }

    fn require_no_offset(&self) -> Result<()> {
        if self.has_offset() {
            return Err(Error::Domain(
                "eigenvalue-level shortcut requires chi = 0".into(),
            ));
        }
        Ok(())
    }

    /// Eigenvalue map `λ_i = θ Σκ − μ κ_i`, entrywise in the input order.
    pub fn map_eigenvalues(&self, kappa: &[f64]) -> Vec<f64> {
        let s: f64 = kappa.iter().sum();
        kappa.iter().map(|&k| self.theta * s - self.mu * k).collect()
    }

    /// Chain rule `F^{ii} = θ Σ_j G^{jj} − μ G^{ii}`.
    pub fn map_gradient(&self, g: &[f64]) -> Vec<f64> {
        let s: f64 = g.iter().sum();
        g.iter().map(|&gi| self.theta * s - self.mu * gi).collect()
    }
}

pub(crate) fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Domain(format!("{what} must be square")));
    }
    let scale = m.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::Domain(format!("{what} is not symmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

/// Symmetric eigendecomposition with eigenvalues ascending; eigenvectors are
/// the columns of the returned matrix in matching order.
pub fn sym_eigen_sorted(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EtaEigen {
    pub lambda: Spectrum,
    /// Whether descending `κ` maps to ascending `λ` (always true for `μ > 0`).
    pub order_reversed: bool,
}

pub fn eta_eigen(params: &EtaParams, kappa: &Spectrum) -> Result<EtaEigen> {
    params.require_no_offset()?;
    // kappa is ascending; walk it descending
    let desc: Vec<f64> = kappa.values().iter().rev().copied().collect();
    let lam = params.map_eigenvalues(&desc);
    let order_reversed = lam.windows(2).all(|w| w[0] <= w[1]);
    Ok(EtaEigen {
        lambda: Spectrum::new(lam)?,
        order_reversed,
    })
}

pub fn eta_matrix(params: &EtaParams, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(w, "W")?;
    let n = w.nrows();
    if let Some(c) = &params.chi {
        if c.nrows() != n {
            return Err(Error::Domain(format!(
                "chi is {}x{} but W is {n}x{n}",
                c.nrows(),
                c.ncols()
            )));
        }
    }
    Ok(eta_matrix_unchecked(params, w))
}

pub(crate) fn eta_matrix_unchecked(params: &EtaParams, w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let tr = w.trace();
    let mut u = w * (-params.mu);
    for i in 0..n {
        u[(i, i)] += params.theta * tr;
    }
    if let Some(c) = &params.chi {
        u += c;
    }
    u
}

/// Closed-form `∂Q/∂λ_i` for `λ` in any order.
pub fn quotient_gradient(op: QuotientOp, lam: &[f64]) -> Vec<f64> {
    let (k, l) = (op.k, op.l);
    let sk = sigma_of(k, lam);
    let sl = sigma_of(l, lam);
    (0..lam.len())
        .map(|i| {
            let a = sigma_skip(k - 1, lam, i, NONE);
            let b = if l == 0 { 0.0 } else { sigma_skip(l - 1, lam, i, NONE) };
            (a * sl - sk * b) / (sl * sl)
        })
        .collect()
}

/// Closed-form Hessian `∂²Q/∂λ_i∂λ_j`.
pub fn quotient_hessian(op: QuotientOp, lam: &[f64]) -> DMatrix<f64> {
    let n = lam.len();
    let (k, l) = (op.k, op.l);
    let a = sigma_of(k, lam);
    let b = sigma_of(l, lam);
    let d1 = |deg: usize, i: usize| -> f64 {
        if deg == 0 {
            0.0
        } else {
            sigma_skip(deg - 1, lam, i, NONE)
        }
    };
    let d2 = |deg: usize, i: usize, j: usize| -> f64 {
        if deg < 2 || i == j {
            0.0
        } else {
            sigma_skip(deg - 2, lam, i, j)
        }
    };
    let ai: Vec<f64> = (0..n).map(|i| d1(k, i)).collect();
    let bi: Vec<f64> = (0..n).map(|i| d1(l, i)).collect();
    DMatrix::from_fn(n, n, |i, j| {
        d2(k, i, j) / b - (ai[i] * bi[j] + ai[j] * bi[i]) / (b * b) - a * d2(l, i, j) / (b * b)
            + 2.0 * a * bi[i] * bi[j] / (b * b * b)
    })
}

/// The quotient operator evaluated at a matrix `W`, with first derivatives
/// and the data needed for second directional derivatives.
#[derive(Clone, Debug)]
pub struct OperatorEval {
    pub op: QuotientOp,
    pub theta: f64,
    pub mu: f64,
    pub value: f64,
    /// Eigenvalues of `U`, ascending.
    pub lambda: Vec<f64>,
    /// Eigenvectors of `U` as columns, matching `lambda`.
    pub frame: DMatrix<f64>,
    /// `G^{ii}` against `lambda`.
    pub g_first: Vec<f64>,
    /// `F^{ij} = ∂Q/∂W_ij` in the input coordinates.
    pub f_first: DMatrix<f64>,
    /// `∂²Q/∂λ_i∂λ_j`.
    pub g_second: DMatrix<f64>,
    /// Eigenvalues of `W`, descending, and its eigenframe.
    w_kappa: Vec<f64>,
    w_frame: DMatrix<f64>,
}

/// Relative eigenvalue gap below which the divided difference
/// `(G^{ii} − G^{jj})/(λ_i − λ_j)` is replaced by its limit.
const COINCIDENT_GAP: f64 = 1e-6;

impl OperatorEval {
    /// `Σ F^{ij,rs} B_ij B_rs` for a symmetric direction `B`.
    pub fn second_form(&self, b: &DMatrix<f64>) -> f64 {
        let n = self.lambda.len();
        let tr = b.trace();
        let mut db = b * (-self.mu);
        for i in 0..n {
            db[(i, i)] += self.theta * tr;
        }
        let bt = self.frame.transpose() * db * &self.frame;
        let scale = self.lambda.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    total += self.g_second[(i, i)] * bt[(i, i)] * bt[(i, i)];
                    continue;
                }
                total += self.g_second[(i, j)] * bt[(i, i)] * bt[(j, j)];
                let gap = self.lambda[i] - self.lambda[j];
                let coef = if gap.abs() <= COINCIDENT_GAP * scale {
                    self.g_second[(i, i)] - self.g_second[(i, j)]
                } else {
                    (self.g_first[i] - self.g_first[j]) / gap
                };
                total += coef * bt[(i, j)] * bt[(i, j)];
            }
        }
        total
    }

    /// Diagonal of `F` in the eigenframe of `W` with `κ` descending.
    pub fn frame_diagonal(&self) -> Vec<f64> {
        let rotated = self.w_frame.transpose() * &self.f_first * &self.w_frame;
        (0..self.lambda.len()).map(|i| rotated[(i, i)]).collect()
    }

    /// Eigenvalues of `W`, descending.
    pub fn kappa(&self) -> &[f64] {
        &self.w_kappa
    }

    /// Gradient matrix `∂Q/∂U` in input coordinates.
    pub fn g_matrix(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&self.g_first));
        &self.frame * d * self.frame.transpose()
    }
}

pub fn evaluate(op: QuotientOp, params: &EtaParams, w: &DMatrix<f64>) -> Result<OperatorEval> {
    evaluate_eps(op, params, w, 0.0)
}

/// As [`evaluate`], with cone threshold `σ_j > eps`.
pub fn evaluate_eps(
    op: QuotientOp,
    params: &EtaParams,
    w: &DMatrix<f64>,
    eps: f64,
) -> Result<OperatorEval> {
    let u = eta_matrix(params, w)?;
    op.check_len(u.nrows())?;
    let (lambda, frame) = sym_eigen_sorted(&u);
    require_cone(op.k, &lambda, eps)?;
    Ok(assemble(op, params, w, lambda, frame))
}

/// Evaluation for callers that already hold the eigendecomposition of `U`
/// and have checked admissibility.
pub(crate) fn assemble(
    op: QuotientOp,
    params: &EtaParams,
    w: &DMatrix<f64>,
    lambda: Vec<f64>,
    frame: DMatrix<f64>,
) -> OperatorEval {
    let value = sigma_of(op.k, &lambda) / sigma_of(op.l, &lambda);
    let g_first = quotient_gradient(op, &lambda);
    let g_second = quotient_hessian(op, &lambda);
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(&g_first));
    let gm = &frame * d * frame.transpose();
    let mut f_first = &gm * (-params.mu);
    let gtr = gm.trace();
    for i in 0..lambda.len() {
        f_first[(i, i)] += params.theta * gtr;
    }
    let (mut kappa, wf) = sym_eigen_sorted(w);
    kappa.reverse();
    let n = kappa.len();
    let w_frame = DMatrix::from_fn(n, n, |r, c| wf[(r, n - 1 - c)]);
    OperatorEval {
        op,
        theta: params.theta,
        mu: params.mu,
        value,
        lambda,
        frame,
        g_first,
        f_first,
        g_second,
        w_kappa: kappa,
        w_frame,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeyLemmaRatio {
    /// `min_i F^{ii} / Σ_j F^{jj}`.
    pub min_ratio: f64,
    /// Second smallest `F^{ii} / Σ_j F^{jj}`.
    pub second_ratio: f64,
    /// `F^{ii}` against `κ` descending (equivalently `λ` ascending when `μ > 0`).
    pub f_diag: Vec<f64>,
}

/// The key-lemma ratio at principal curvatures `kappa`.
pub fn key_lemma_ratio(op: QuotientOp, params: &EtaParams, kappa: &Spectrum) -> Result<KeyLemmaRatio> {
    params.require_no_offset()?;
    op.check_len(kappa.len())?;
    let desc: Vec<f64> = kappa.values().iter().rev().copied().collect();
    let lam = params.map_eigenvalues(&desc);
    require_cone(op.k, &lam, 0.0)?;
    Ok(key_lemma_from_lambda(op, params.theta, params.mu, &lam))
}

/// The key-lemma ratio expressed directly through transformed eigenvalues;
/// entries of `lam` may be in any order and `f_diag` follows it.
pub fn key_lemma_from_lambda(op: QuotientOp, theta: f64, mu: f64, lam: &[f64]) -> KeyLemmaRatio {
    let g = quotient_gradient(op, lam);
    let gs: f64 = g.iter().sum();
    let f_diag: Vec<f64> = g.iter().map(|&gi| theta * gs - mu * gi).collect();
    let total: f64 = f_diag.iter().sum();
    let mut sorted = f_diag.clone();
    sorted.sort_by(f64::total_cmp);
    KeyLemmaRatio {
        min_ratio: sorted[0] / total,
        second_ratio: sorted[1] / total,
        f_diag,
    }
}

/// `(1 − 1/(k−l)) (G·ξ)²/Q − ξᵀ (D²Q) ξ`, nonnegative by concavity.
pub fn concavity_gap(op: QuotientOp, lam: &Spectrum, xi: &[f64]) -> Result<f64> {
    op.check_len(lam.len())?;
    if xi.len() != lam.len() {
        return Err(Error::IndexDomain("direction length must equal n".into()));
    }
    require_cone(op.k, lam.values(), 0.0)?;
    let q = sigma_of(op.k, lam.values()) / sigma_of(op.l, lam.values());
    let g = quotient_gradient(op, lam.values());
    let h = quotient_hessian(op, lam.values());
    Ok(concavity_gap_with(op, q, &g, &h, xi))
}

pub(crate) fn concavity_gap_with(
    op: QuotientOp,
    q: f64,
    g: &[f64],
    h: &DMatrix<f64>,
    xi: &[f64],
) -> f64 {
    let n = xi.len();
    let gx: f64 = g.iter().zip(xi).map(|(a, b)| a * b).sum();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += h[(i, j)] * xi[i] * xi[j];
        }
    }
    (1.0 - 1.0 / op.degree() as f64) * gx * gx / q - quad
}

/// Residuals of `Σ F^{ij} W_ij = Σ G^{ii} η_ii` and of the same contraction
/// along a direction `B`, where `η = U − χ`.
pub fn trace_identities(
    op: QuotientOp,
    params: &EtaParams,
    w: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    check_symmetric(b, "B")?;
    let ev = evaluate(op, params, w)?;
    let n = ev.lambda.len();
    let lhs1: f64 = ev.f_first.component_mul(w).sum();
    let mut eta = eta_matrix_unchecked(params, w);
    if let Some(c) = &params.chi {
        eta -= c;
    }
    let eta_f = ev.frame.transpose() * eta * &ev.frame;
    let rhs1: f64 = (0..n).map(|i| ev.g_first[i] * eta_f[(i, i)]).sum();
    let lhs2: f64 = ev.f_first.component_mul(b).sum();
    let mut db = b * (-params.mu);
    let tr = b.trace();
    for i in 0..n {
        db[(i, i)] += params.theta * tr;
    }
    let db_f = ev.frame.transpose() * db * &ev.frame;
    let rhs2: f64 = (0..n).map(|i| ev.g_first[i] * db_f[(i, i)]).sum();
    Ok(((lhs1 - rhs1).abs(), (lhs2 - rhs2).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec(v: &[f64]) -> Spectrum {
        Spectrum::from_slice(v).unwrap()
    }

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    /// Central-difference derivative of `Q(η(W))` along the symmetric
    /// elementary direction at (i, j).
    fn fd_entry(op: QuotientOp, p: &EtaParams, w: &DMatrix<f64>, i: usize, j: usize, h: f64) -> f64 {
        let val = |t: f64| {
            let mut m = w.clone();
            m[(i, j)] += t;
            if i != j {
                m[(j, i)] += t;
            }
            evaluate(op, p, &m).unwrap().value
        };
        let d = (val(h) - val(-h)) / (2.0 * h);
        if i == j {
            d
        } else {
            d / 2.0
        }
    }

    #[test]
    fn eta_eigen_examples() {
        let p = EtaParams::newton();
        let e = eta_eigen(&p, &spec(&[2.0, 1.0, 0.0])).unwrap();
        assert_eq!(e.lambda.values(), &[1.0, 2.0, 3.0]);
        assert!(e.order_reversed);
        let e = eta_eigen(&p, &spec(&[0.7; 4])).unwrap();
        for &v in e.lambda.values() {
            assert_relative_eq!(v, 3.0 * 0.7, epsilon = 1e-15);
        }
        let trace = EtaParams::flat(1.0, 0.0).unwrap();
        let e = eta_eigen(&trace, &spec(&[2.0, 1.0, 0.0])).unwrap();
        assert_eq!(e.lambda.values(), &[3.0, 3.0, 3.0]);
        let offset = EtaParams::new(1.0, 1.0, Some(diag(&[1.0, 0.0, 0.0]))).unwrap();
        assert!(eta_eigen(&offset, &spec(&[2.0, 1.0, 0.0])).is_err());
    }

    #[test]
    fn eta_matrix_examples() {
        let p = EtaParams::newton();
        let u = eta_matrix(&p, &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(u, DMatrix::identity(3, 3) * 2.0);
        let u = eta_matrix(&p, &diag(&[0.0, 1.0, 2.0])).unwrap();
        assert_eq!(u, diag(&[3.0, 2.0, 1.0]));
        let offset = EtaParams::new(1.0, 1.0, Some(diag(&[1.0, 0.0, 0.0]))).unwrap();
        let u = eta_matrix(&offset, &DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(u, diag(&[1.0, 0.0, 0.0]));
        let mut bad = DMatrix::identity(3, 3);
        bad[(0, 1)] = 1.0;
        assert!(matches!(eta_matrix(&p, &bad), Err(Error::Domain(_))));
        assert!(EtaParams::flat(0.5, 1.0).is_err());
        assert!(EtaParams::flat(0.0, -1.0).is_err());
    }

    #[test]
    fn evaluate_anchor() {
        let op = QuotientOp::new(3, 2, 1).unwrap();
        let p = EtaParams::newton();
        let w = diag(&[2.0, 1.0, 0.0]);
        let ev = evaluate(op, &p, &w).unwrap();
        assert_relative_eq!(ev.value, 11.0 / 6.0, epsilon = 1e-14);
        let g_expect = [19.0 / 36.0, 13.0 / 36.0, 7.0 / 36.0];
        for (a, b) in ev.g_first.iter().zip(g_expect) {
            assert_relative_eq!(*a, b, epsilon = 1e-14);
        }
        let f_expect = [20.0 / 36.0, 26.0 / 36.0, 32.0 / 36.0];
        for (a, b) in ev.frame_diagonal().iter().zip(f_expect) {
            assert_relative_eq!(*a, b, epsilon = 1e-14);
        }
        // finite-difference oracle on the diagonal entries of W
        for (i, &fe) in f_expect.iter().enumerate() {
            assert_relative_eq!(fd_entry(op, &p, &w, i, i, 1e-5), fe, max_relative = 1e-8);
        }
        let euler: f64 = ev.g_first.iter().zip(&ev.lambda).map(|(g, l)| g * l).sum();
        assert_relative_eq!(euler, 11.0 / 6.0, epsilon = 1e-14);
    }

    #[test]
    fn evaluate_sigma_only() {
        let op = QuotientOp::new(3, 2, 0).unwrap();
        let ev = evaluate(op, &EtaParams::newton(), &DMatrix::identity(3, 3)).unwrap();
        assert_relative_eq!(ev.value, 12.0, epsilon = 1e-13);
        for g in &ev.g_first {
            assert_relative_eq!(*g, 4.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn evaluate_rejects_outside_cone() {
        let op = QuotientOp::new(3, 2, 1).unwrap();
        let r = evaluate(op, &EtaParams::newton(), &DMatrix::zeros(3, 3));
        assert!(matches!(r, Err(Error::Admissibility { index: 1, .. })));
    }

    #[test]
    fn f_first_matches_finite_differences_off_diagonal() {
        let op = QuotientOp::new(3, 2, 1).unwrap();
        let p = EtaParams::new(1.3, 0.8, Some(diag(&[0.1, -0.05, 0.2]))).unwrap();
        let w = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, -0.2, 0.3, 0.5, 0.1, -0.2, 0.1, 0.2]);
        let ev = evaluate(op, &p, &w).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let fd = fd_entry(op, &p, &w, i, j, 1e-5);
                assert_relative_eq!(ev.f_first[(i, j)], fd, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn second_form_matches_finite_differences() {
        let op = QuotientOp::new(3, 2, 1).unwrap();
        let p = EtaParams::flat(1.2, 1.0).unwrap();
        let b = DMatrix::from_row_slice(3, 3, &[0.4, -0.3, 0.2, -0.3, -0.1, 0.5, 0.2, 0.5, 0.3]);
        // generic and nearly coincident spectra
        for w in [
            DMatrix::from_row_slice(3, 3, &[1.0, 0.3, -0.2, 0.3, 0.5, 0.1, -0.2, 0.1, 0.2]),
            diag(&[1.0, 1.0 + 1e-9, 0.4]),
        ] {
            let ev = evaluate(op, &p, &w).unwrap();
            let h = 1e-4;
            let val = |t: f64| evaluate(op, &p, &(&w + &b * t)).unwrap().value;
            let fd = (val(h) - 2.0 * val(0.0) + val(-h)) / (h * h);
            assert_relative_eq!(ev.second_form(&b), fd, epsilon = 1e-5, max_relative = 1e-5);
        }
    }

    #[test]
    fn key_lemma_examples() {
        let op = QuotientOp::new(3, 2, 1).unwrap();
        let p = EtaParams::newton();
        let r = key_lemma_ratio(op, &p, &spec(&[2.0, 1.0, 0.0])).unwrap();
        assert_relative_eq!(r.min_ratio, 20.0 / 78.0, epsilon = 1e-15);
        assert_relative_eq!(r.f_diag[0], 20.0 / 36.0, epsilon = 1e-15);
        for n in 3..6 {
            let op = QuotientOp::new(n, 2, 1).unwrap();
            let r = key_lemma_ratio(op, &p, &spec(&vec![0.8; n])).unwrap();
            assert_relative_eq!(r.min_ratio, 1.0 / n as f64, epsilon = 1e-14);
        }
        // k = n degenerates
        let op = QuotientOp::new(3, 3, 2).unwrap();
        let r = key_lemma_from_lambda(op, 1.0, 1.0, &[1e-3, 1.0, 1.0]);
        assert!(r.min_ratio < 1e-2);
    }

    #[test]
    fn concavity_examples() {
        let op = QuotientOp::new(3, 2, 1).unwrap();
        let lam = spec(&[1.0, 2.0, 3.0]);
        let gap = concavity_gap(op, &lam, &[1.0, 2.0, 3.0]).unwrap();
        assert!(gap.abs() < 1e-13);
        // second-order central differences of Q along e1, step 1e-4
        let q = |t: f64| sigma_of(2, &[1.0 + t, 2.0, 3.0]) / sigma_of(1, &[1.0 + t, 2.0, 3.0]);
        let h = 1e-4;
        let fd = (q(h) - 2.0 * q(0.0) + q(-h)) / (h * h);
        let gap = concavity_gap(op, &lam, &[1.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(gap, -fd, max_relative = 1e-5);
        assert!(gap > 0.0);
        let op = QuotientOp::new(3, 2, 0).unwrap();
        let gap = concavity_gap(op, &spec(&[1.0, 1.0, 1.0]), &[1.0, -1.0, 0.0]).unwrap();
        assert!(gap >= 0.0);
    }

    #[test]
    fn trace_identity_examples() {
        let op = QuotientOp::new(3, 2, 1).unwrap();
        let p = EtaParams::newton();
        let (r1, r2) =
            trace_identities(op, &p, &diag(&[2.0, 1.0, 0.0]), &DMatrix::identity(3, 3)).unwrap();
        assert!(r1 < 1e-14 && r2 < 1e-14);
        let ev = evaluate(op, &p, &diag(&[2.0, 1.0, 0.0])).unwrap();
        let fk: f64 = ev.frame_diagonal().iter().zip(ev.kappa()).map(|(f, k)| f * k).sum();
        assert_relative_eq!(fk, 11.0 / 6.0, epsilon = 1e-14);
        let (r1, r2) =
            trace_identities(op, &p, &DMatrix::identity(3, 3), &DMatrix::identity(3, 3)).unwrap();
        assert!(r1 < 1e-14 && r2 < 1e-14);
    }

    #[test]
    fn eigen_commutes_with_transform() {
        let p = EtaParams::flat(1.5, 0.7).unwrap();
        let w = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, -0.2, 0.3, 0.5, 0.1, -0.2, 0.1, 0.2]);
        let (kap, _) = sym_eigen_sorted(&w);
        let via_eigen = eta_eigen(&p, &spec(&kap)).unwrap();
        let (via_matrix, _) = sym_eigen_sorted(&eta_matrix(&p, &w).unwrap());
        for (a, b) in via_eigen.lambda.values().iter().zip(&via_matrix) {
            assert_relative_eq!(*a, *b, epsilon = 1e-12);
        }
    }
}
