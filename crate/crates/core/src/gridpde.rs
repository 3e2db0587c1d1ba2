//! Finite-difference Dirichlet solver for
//! `σ_k(U[u]) / σ_l(U[u]) = f(x, u, Du)` with `U = θ Δu I − μ D²u + χ`.
//!
//! Unknowns live at interior nodes of a uniform grid over a box or a ball;
//! boundary nodes carry Dirichlet data. Derivatives use second-order central
//! differences, and the discrete system is solved by damped Newton with a
//! sparse LU factorization of the analytic Jacobian. Every accepted iterate
//! keeps the transformed spectrum inside the Gårding cone at every node.

use std::fmt::Write as _;
use std::sync::Arc;

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etacalc::{eta_matrix_unchecked, quotient_gradient, sym_eigen_sorted, EtaParams};
use crate::expr::{Bindings, Expr, Var};
use crate::par::{map_range, Exec};
use crate::symcone::{binomial, sigma_all, QuotientOp};

const NONE: usize = usize::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Domain {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl Domain {
    pub fn unit_ball(n: usize) -> Self {
        Domain::Ball {
            center: vec![0.0; n],
            radius: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Box { lo, .. } => lo.len(),
            Domain::Ball { center, .. } => center.len(),
        }
    }

    pub fn center(&self) -> Vec<f64> {
        match self {
            Domain::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect(),
            Domain::Ball { center, .. } => center.clone(),
        }
    }

    /// Ball radius, or the inscribed radius of a box.
    pub fn radius(&self) -> f64 {
        match self {
            Domain::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(a, b)| 0.5 * (b - a))
                .fold(f64::INFINITY, f64::min),
            Domain::Ball { radius, .. } => *radius,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    Boundary,
    Inactive,
}

/// A uniform tensor grid with node classification.
#[derive(Clone, Debug)]
pub struct Grid {
    pub domain: Domain,
    pub dims: Vec<usize>,
    pub lo: Vec<f64>,
    pub h: f64,
    strides: Vec<usize>,
    kinds: Vec<NodeKind>,
    interior: Vec<usize>,
    boundary: Vec<usize>,
    unknown: Vec<usize>,
}

impl Grid {
    /// A grid with `points` nodes along the first axis of the domain's
    /// bounding box (every axis for a ball).
    pub fn new(domain: Domain, points: usize) -> Result<Grid> {
        let n = domain.dim();
        if n < 1 {
            return Err(Error::Domain("domain dimension must be at least 1".into()));
        }
        if points < 3 {
            return Err(Error::Domain(format!("need at least 3 points per axis, got {points}")));
        }
        let (lo, dims, h) = match &domain {
            Domain::Box { lo, hi } => {
                if hi.len() != n || lo.iter().zip(hi).any(|(a, b)| !(b > a)) {
                    return Err(Error::Domain("box needs lo < hi on every axis".into()));
                }
                let h = (hi[0] - lo[0]) / (points - 1) as f64;
                let mut dims = Vec::with_capacity(n);
                for (a, b) in lo.iter().zip(hi) {
                    let cells = (b - a) / h;
                    let m = cells.round();
                    if (cells - m).abs() > 1e-9 * cells.max(1.0) || m < 2.0 {
                        return Err(Error::Domain(format!(
                            "box side {} is not a multiple of the spacing {h}",
                            b - a
                        )));
                    }
                    dims.push(m as usize + 1);
                }
                (lo.clone(), dims, h)
            }
            Domain::Ball { center, radius } => {
                if !(*radius > 0.0) {
                    return Err(Error::Domain("ball radius must be positive".into()));
                }
                let h = 2.0 * radius / (points - 1) as f64;
                (center.iter().map(|c| c - radius).collect(), vec![points; n], h)
            }
        };
        let mut strides = vec![1usize; n];
        for i in 1..n {
            strides[i] = strides[i - 1] * dims[i - 1];
        }
        let total = strides[n - 1] * dims[n - 1];
        let mut grid = Grid {
            domain,
            dims,
            lo,
            h,
            strides,
            kinds: vec![NodeKind::Inactive; total],
            interior: Vec::new(),
            boundary: Vec::new(),
            unknown: vec![NONE; total],
        };
        grid.classify();
        if grid.interior.is_empty() {
            return Err(Error::Domain("grid has no interior nodes".into()));
        }
        Ok(grid)
    }

    fn classify(&mut self) {
        let total = self.kinds.len();
        for flat in 0..total {
            let idx = self.multi_index(flat);
            let inside = match &self.domain {
                Domain::Box { .. } => idx.iter().zip(&self.dims).all(|(&i, &d)| i > 0 && i + 1 < d),
                Domain::Ball { center, radius } => {
                    let r2: f64 = self
                        .coords(flat)
                        .iter()
                        .zip(center)
                        .map(|(x, c)| (x - c) * (x - c))
                        .sum();
                    r2.sqrt() < radius * (1.0 - 1e-12)
                }
            };
            if inside {
                self.kinds[flat] = NodeKind::Interior;
            }
        }
        for flat in 0..total {
            if self.kinds[flat] == NodeKind::Interior {
                self.unknown[flat] = self.interior.len();
                self.interior.push(flat);
            }
        }
        let offsets = self.neighbor_offsets();
        let mut is_boundary = vec![false; total];
        for &p in &self.interior {
            for &o in &offsets {
                let q = (p as isize + o) as usize;
                if self.kinds[q] != NodeKind::Interior {
                    is_boundary[q] = true;
                }
            }
        }
        for (flat, b) in is_boundary.into_iter().enumerate() {
            if b {
                self.kinds[flat] = NodeKind::Boundary;
                self.boundary.push(flat);
            }
        }
    }

    /// Flat offsets of the full `3ⁿ − 1` neighborhood.
    fn neighbor_offsets(&self) -> Vec<isize> {
        let n = self.dim();
        let mut out = vec![0isize];
        for i in 0..n {
            let s = self.strides[i] as isize;
            out = out.iter().flat_map(|&o| [o - s, o, o + s]).collect();
        }
        out.retain(|&o| o != 0);
        out
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kind(&self, flat: usize) -> NodeKind {
        self.kinds[flat]
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    /// Unknown index of an interior node.
    pub fn unknown_of(&self, flat: usize) -> Option<usize> {
        let u = self.unknown[flat];
        (u != NONE).then_some(u)
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        self.dims
            .iter()
            .map(|&d| {
                let i = flat % d;
                flat /= d;
                i
            })
            .collect()
    }

    pub fn coords(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .zip(&self.lo)
            .map(|(&i, &lo)| lo + i as f64 * self.h)
            .collect()
    }

    /// Flat index of the node nearest to `x`.
    pub fn nearest(&self, x: &[f64]) -> usize {
        x.iter()
            .enumerate()
            .map(|(a, &v)| {
                let i = ((v - self.lo[a]) / self.h).round().clamp(0.0, (self.dims[a] - 1) as f64);
                i as usize * self.strides[a]
            })
            .sum()
    }

    fn distance_to_center(&self, flat: usize) -> f64 {
        let c = self.domain.center();
        self.coords(flat)
            .iter()
            .zip(&c)
            .map(|(x, c)| (x - c) * (x - c))
            .sum::<f64>()
            .sqrt()
    }
}

/// Scalar values on every node of a grid. Inactive nodes hold zero.
#[derive(Clone, Debug)]
pub struct GridField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> GridField {
        let values = (0..grid.len())
            .map(|p| match grid.kind(p) {
                NodeKind::Inactive => 0.0,
                _ => f(&grid.coords(p)),
            })
            .collect();
        GridField { grid, values }
    }

    pub fn h(&self) -> f64 {
        self.grid.h
    }

    /// Largest `|u − g|` over interior nodes.
    pub fn max_error(&self, exact: impl Fn(&[f64]) -> f64) -> f64 {
        self.grid
            .interior()
            .iter()
            .map(|&p| (self.values[p] - exact(&self.grid.coords(p))).abs())
            .fold(0.0, f64::max)
    }

    /// `x1,…,xn,u` per active node.
    pub fn to_csv(&self) -> String {
        let n = self.grid.dim();
        let mut out = String::new();
        for i in 1..=n {
            let _ = write!(out, "x{i},");
        }
        out.push_str("kind,u\n");
        for p in 0..self.grid.len() {
            let kind = match self.grid.kind(p) {
                NodeKind::Interior => "interior",
                NodeKind::Boundary => "boundary",
                NodeKind::Inactive => continue,
            };
            for x in self.grid.coords(p) {
                let _ = write!(out, "{x:?},");
            }
            let _ = writeln!(out, "{kind},{:?}", self.values[p]);
        }
        out
    }
}

/// First and second central differences at one node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeDerivatives {
    pub du: Vec<f64>,
    pub d2u: DMatrix<f64>,
}

fn derivs_unchecked(field: &GridField, p: usize) -> NodeDerivatives {
    let g = &field.grid;
    let u = &field.values;
    let n = g.dim();
    let h = g.h;
    let mut du = vec![0.0; n];
    let mut d2u = DMatrix::zeros(n, n);
    for i in 0..n {
        let si = g.strides[i];
        du[i] = (u[p + si] - u[p - si]) / (2.0 * h);
        d2u[(i, i)] = (u[p + si] - 2.0 * u[p] + u[p - si]) / (h * h);
        for j in 0..i {
            let sj = g.strides[j];
            let v = (u[p + si + sj] - u[p + si - sj] - u[p - si + sj] + u[p - si - sj]) / (4.0 * h * h);
            d2u[(i, j)] = v;
            d2u[(j, i)] = v;
        }
    }
    NodeDerivatives { du, d2u }
}

/// Central differences at node `flat`; only interior nodes have full stencils.
pub fn discretize_at(field: &GridField, flat: usize) -> Result<NodeDerivatives> {
    if flat >= field.grid.len() || field.grid.kind(flat) != NodeKind::Interior {
        return Err(Error::Stencil(format!("node {flat} has no full central-difference stencil")));
    }
    Ok(derivs_unchecked(field, flat))
}

/// Central differences at every interior node, in interior order.
pub fn discretize(field: &GridField, exec: Exec) -> Vec<NodeDerivatives> {
    map_slice_interior(exec, field, |p| derivs_unchecked(field, p))
}

fn map_slice_interior<T: Send>(exec: Exec, field: &GridField, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    let interior = field.grid.interior();
    map_range(exec, interior.len(), |a| f(interior[a]))
}

type FieldFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type RhsFn = Arc<dyn Fn(&[f64], f64, &[f64]) -> f64 + Send + Sync>;

/// Right-hand side `f(x, u, Du)`.
#[derive(Clone)]
pub enum Rhs {
    /// Parsed expression with symbolic partials in `u` and `p`.
    Expr { f: Expr, du: Expr, dp: Vec<Expr> },
    /// Depends on position only.
    Field(FieldFn),
    /// General closure; partials by central differences.
    Func(RhsFn),
}

impl std::fmt::Debug for Rhs {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rhs::Expr { f: e, .. } => write!(f, "Rhs::Expr({e})"),
            Rhs::Field(_) => write!(f, "Rhs::Field(..)"),
            Rhs::Func(_) => write!(f, "Rhs::Func(..)"),
        }
    }
}

impl Rhs {
    pub fn expr(f: Expr, n: usize) -> Result<Rhs> {
        if f.mentions(&|v| v == Var::R) {
            return Err(Error::Input("right-hand side may not use `r`".into()));
        }
        let top = f.max_coordinate_index();
        if top > n {
            return Err(Error::Input(format!(
                "right-hand side uses index {top} in dimension {n}"
            )));
        }
        let du = f.derivative(Var::U);
        let dp = (1..=n).map(|i| f.derivative(Var::P(i))).collect();
        Ok(Rhs::Expr { f, du, dp })
    }

    pub fn parse(text: &str, n: usize) -> Result<Rhs> {
        Rhs::expr(Expr::parse(text)?, n)
    }

    pub fn constant(c: f64) -> Rhs {
        Rhs::Field(Arc::new(move |_| c))
    }

    pub fn field(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Rhs {
        Rhs::Field(Arc::new(f))
    }

    pub fn func(f: impl Fn(&[f64], f64, &[f64]) -> f64 + Send + Sync + 'static) -> Rhs {
        Rhs::Func(Arc::new(f))
    }

    pub fn value(&self, x: &[f64], u: f64, p: &[f64]) -> Result<f64> {
        match self {
            Rhs::Expr { f, .. } => Ok(f.eval(&Bindings::full(x, u, p))?),
            Rhs::Field(g) => Ok(g(x)),
            Rhs::Func(g) => Ok(g(x, u, p)),
        }
    }

    /// `(∂f/∂u, ∂f/∂p)`.
    pub fn partials(&self, x: &[f64], u: f64, p: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self {
            Rhs::Expr { du, dp, .. } => {
                let b = Bindings::full(x, u, p);
                let fu = du.eval(&b)?;
                let fp = dp.iter().map(|d| d.eval(&b)).collect::<std::result::Result<_, _>>()?;
                Ok((fu, fp))
            }
            Rhs::Field(_) => Ok((0.0, vec![0.0; p.len()])),
            Rhs::Func(g) => {
                let step = |v: f64| 1e-6 * (1.0 + v.abs());
                let hu = step(u);
                let fu = (g(x, u + hu, p) - g(x, u - hu, p)) / (2.0 * hu);
                let mut q = p.to_vec();
                let fp = (0..p.len())
                    .map(|i| {
                        let hp = step(p[i]);
                        q[i] = p[i] + hp;
                        let a = g(x, u, &q);
                        q[i] = p[i] - hp;
                        let b = g(x, u, &q);
                        q[i] = p[i];
                        (a - b) / (2.0 * hp)
                    })
                    .collect();
                Ok((fu, fp))
            }
        }
    }
}

/// Dirichlet data `g(x)`.
#[derive(Clone)]
pub enum BoundaryData {
    Expr(Expr),
    Func(FieldFn),
}

impl std::fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundaryData::Expr(e) => write!(f, "BoundaryData::Expr({e})"),
            BoundaryData::Func(_) => write!(f, "BoundaryData::Func(..)"),
        }
    }
}

impl BoundaryData {
    pub fn zero() -> Self {
        BoundaryData::Func(Arc::new(|_| 0.0))
    }

    pub fn func(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        BoundaryData::Func(Arc::new(f))
    }

    pub fn parse(text: &str, n: usize) -> Result<Self> {
        let e = Expr::parse(text)?;
        if e.mentions(&|v| !matches!(v, Var::X(_) | Var::Pi)) {
            return Err(Error::Input("boundary data may only use x1..xn".into()));
        }
        if e.max_coordinate_index() > n {
            return Err(Error::Input("boundary data uses a coordinate beyond the dimension".into()));
        }
        Ok(BoundaryData::Expr(e))
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        match self {
            BoundaryData::Expr(e) => Ok(e.eval(&Bindings::point(x))?),
            BoundaryData::Func(g) => Ok(g(x)),
        }
    }
}

/// Where ball boundary data is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// At the boundary node itself; keeps the scheme second order when the
    /// data extends smoothly past the sphere.
    #[default]
    AtNode,
    /// At the radial projection of the node onto the sphere.
    Projected,
}

#[derive(Clone, Debug)]
pub struct DirichletProblem {
    pub op: QuotientOp,
    pub params: EtaParams,
    pub rhs: Rhs,
    pub boundary: BoundaryData,
    pub domain: Domain,
    pub boundary_mode: BoundaryMode,
}

impl DirichletProblem {
    pub fn new(op: QuotientOp, params: EtaParams, rhs: Rhs, boundary: BoundaryData, domain: Domain) -> Result<Self> {
        if domain.dim() != op.n {
            return Err(Error::Domain(format!(
                "operator dimension {} does not match domain dimension {}",
                op.n,
                domain.dim()
            )));
        }
        if let Some(c) = &params.chi {
            if c.nrows() != op.n {
                return Err(Error::Domain("chi has the wrong size".into()));
            }
        }
        Ok(Self {
            op,
            params,
            rhs,
            boundary,
            domain,
            boundary_mode: BoundaryMode::AtNode,
        })
    }

    pub fn grid(&self, points: usize) -> Result<Grid> {
        Grid::new(self.domain.clone(), points)
    }

    /// A field holding the boundary data on boundary nodes and `interior`
    /// elsewhere.
    pub fn field_with(&self, grid: &Grid, interior: impl Fn(&[f64]) -> f64) -> Result<GridField> {
        let mut values = vec![0.0; grid.len()];
        for &p in grid.interior() {
            values[p] = interior(&grid.coords(p));
        }
        for &p in grid.boundary() {
            values[p] = self.boundary_value(&grid.coords(p))?;
        }
        Ok(GridField {
            grid: grid.clone(),
            values,
        })
    }

    fn boundary_value(&self, x: &[f64]) -> Result<f64> {
        match (&self.domain, self.boundary_mode) {
            (Domain::Ball { center, radius }, BoundaryMode::Projected) => {
                let d: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
                let y: Vec<f64> = if d > 0.0 {
                    x.iter().zip(center).map(|(a, c)| c + radius * (a - c) / d).collect()
                } else {
                    x.to_vec()
                };
                self.boundary.value(&y)
            }
            _ => self.boundary.value(x),
        }
    }
}

/// How `|D²u|` is measured by the monitors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianNorm {
    #[default]
    Spectral,
    Frobenius,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Converged when the sup-norm residual is below `tol · f_scale`.
    pub tol: f64,
    pub max_iter: usize,
    pub eps_cone: f64,
    pub backtrack: f64,
    pub min_step: f64,
    /// Multiplier on the automatically chosen bowl curvature.
    pub bowl_scale: f64,
    pub continuation_steps: usize,
    pub min_dt: f64,
    pub beta: f64,
    pub norm: HessianNorm,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            eps_cone: 1e-12,
            backtrack: 0.5,
            min_step: 1e-8,
            bowl_scale: 1.0,
            continuation_steps: 10,
            min_dt: 1.0 / 160.0,
            beta: 2.0,
            norm: HessianNorm::Spectral,
            exec: Exec::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Monitors {
    /// `sup |D²u|` over interior nodes.
    pub global_sup: f64,
    /// `sup |D²u|` over nodes within half the radius of the center.
    pub interior_sup: f64,
    /// `sup (−u)₊^β |D²u|` over interior nodes.
    pub pogorelov_sup: f64,
}

fn hessian_norm(d2u: &DMatrix<f64>, norm: HessianNorm) -> f64 {
    match norm {
        HessianNorm::Spectral => nalgebra::SymmetricEigen::new(d2u.clone())
            .eigenvalues
            .iter()
            .fold(0.0, |a, v| a.max(v.abs())),
        HessianNorm::Frobenius => d2u.norm(),
    }
}

pub fn monitor_estimates(u: &GridField, beta: f64) -> Result<Monitors> {
    monitor_estimates_with(u, beta, HessianNorm::Spectral, Exec::default())
}

pub fn monitor_estimates_with(u: &GridField, beta: f64, norm: HessianNorm, exec: Exec) -> Result<Monitors> {
    if !(beta >= 0.0) {
        return Err(Error::Domain(format!("beta must be nonnegative, got {beta}")));
    }
    let half = 0.5 * u.grid.domain.radius();
    let per_node = map_slice_interior(exec, u, |p| {
        let d = derivs_unchecked(u, p);
        let size = hessian_norm(&d.d2u, norm);
        let inner = u.grid.distance_to_center(p) <= half * (1.0 + 1e-12);
        let weight = (-u.values[p]).max(0.0).powf(beta);
        (size, inner, weight * size)
    });
    let mut m = Monitors::default();
    for (size, inner, pog) in per_node {
        m.global_sup = m.global_sup.max(size);
        if inner {
            m.interior_sup = m.interior_sup.max(size);
        }
        m.pogorelov_sup = m.pogorelov_sup.max(pog);
    }
    Ok(m)
}

/// Residual values at interior nodes plus an admissibility report.
#[derive(Clone, Debug)]
pub struct ResidualReport {
    /// `Q − f` per interior node; at inadmissible nodes the most negative
    /// failing `σ_j` replaces `Q`.
    pub values: Vec<f64>,
    /// Interior order indices of nodes outside the cone.
    pub inadmissible: Vec<usize>,
    /// Smallest `σ_j(λ(U))`, `1 ≤ j ≤ k`, over all nodes.
    pub min_margin: f64,
    /// Right-hand side values per node.
    pub f: Vec<f64>,
}

impl ResidualReport {
    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn l2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn admissible(&self) -> bool {
        self.inadmissible.is_empty()
    }
}

/// Right-hand side along the homotopy `(1 − t) f₀(x) + t f(x, u, Du)`.
struct RhsPath<'a> {
    rhs: &'a Rhs,
    t: f64,
    f0: Option<&'a [f64]>,
}

impl RhsPath<'_> {
    fn target(rhs: &Rhs) -> RhsPath<'_> {
        RhsPath { rhs, t: 1.0, f0: None }
    }

    fn value(&self, a: usize, x: &[f64], u: f64, p: &[f64]) -> Result<f64> {
        let base = self.f0.map_or(0.0, |f0| (1.0 - self.t) * f0[a]);
        if self.t == 0.0 {
            return Ok(base);
        }
        Ok(base + self.t * self.rhs.value(x, u, p)?)
    }

    fn partials(&self, x: &[f64], u: f64, p: &[f64]) -> Result<(f64, Vec<f64>)> {
        if self.t == 0.0 {
            return Ok((0.0, vec![0.0; p.len()]));
        }
        let (fu, fp) = self.rhs.partials(x, u, p)?;
        Ok((self.t * fu, fp.into_iter().map(|v| self.t * v).collect()))
    }
}

struct NodeEval {
    residual: f64,
    margin: f64,
    admissible: bool,
    f: f64,
    row: Vec<(usize, f64)>,
}

fn eval_node(
    problem: &DirichletProblem,
    field: &GridField,
    path: &RhsPath<'_>,
    a: usize,
    eps: f64,
    jacobian: bool,
) -> Result<NodeEval> {
    let g = &field.grid;
    let p = g.interior()[a];
    let x = g.coords(p);
    let d = derivs_unchecked(field, p);
    let u = field.values[p];
    let f = path.value(a, &x, u, &d.du)?;
    if !(f > 0.0) {
        return Err(Error::Positivity(format!("f = {f} at x = {x:?}")));
    }
    let op = problem.op;
    let umat = eta_matrix_unchecked(&problem.params, &d.d2u);
    let (lambda, frame) = sym_eigen_sorted(&umat);
    let sig = sigma_all(&lambda);
    let margin = sig[1..=op.k].iter().fold(f64::INFINITY, |a, &v| a.min(v));
    let admissible = margin > eps;
    if !admissible {
        let penalty = sig[1..=op.k].iter().filter(|&&v| v <= eps).fold(0.0f64, |a, &v| a.min(v));
        return Ok(NodeEval {
            residual: penalty - f,
            margin,
            admissible,
            f,
            row: Vec::new(),
        });
    }
    let q = sig[op.k] / sig[op.l];
    let mut row = Vec::new();
    if jacobian {
        let n = g.dim();
        let gdiag = quotient_gradient(op, &lambda);
        let mut gm = DMatrix::zeros(n, n);
        for (c, gv) in gdiag.iter().enumerate() {
            let col = frame.column(c);
            gm += (&col * col.transpose()) * *gv;
        }
        let gtr = gm.trace();
        let mut fm = gm * (-problem.params.mu);
        for i in 0..n {
            fm[(i, i)] += problem.params.theta * gtr;
        }
        let (fu, fp) = path.partials(&x, u, &d.du)?;
        let h = g.h;
        let mut push = |q: usize, v: f64| {
            if let Some(col) = g.unknown_of(q) {
                row.push((col, v));
            }
        };
        let mut center = -fu;
        for i in 0..n {
            let si = g.strides[i];
            center -= 2.0 * fm[(i, i)] / (h * h);
            push(p + si, fm[(i, i)] / (h * h) - fp[i] / (2.0 * h));
            push(p - si, fm[(i, i)] / (h * h) + fp[i] / (2.0 * h));
            for j in 0..i {
                let sj = g.strides[j];
                let c = 2.0 * fm[(i, j)] / (4.0 * h * h);
                push(p + si + sj, c);
                push(p - si - sj, c);
                push(p + si - sj, -c);
                push(p - si + sj, -c);
            }
        }
        push(p, center);
    }
    Ok(NodeEval {
        residual: q - f,
        margin,
        admissible,
        f,
        row,
    })
}

fn eval_all(
    problem: &DirichletProblem,
    field: &GridField,
    path: &RhsPath<'_>,
    eps: f64,
    jacobian: bool,
    exec: Exec,
) -> Result<Vec<NodeEval>> {
    let m = field.grid.interior().len();
    map_range(exec, m, |a| eval_node(problem, field, path, a, eps, jacobian))
        .into_iter()
        .collect()
}

fn report_of(evals: &[NodeEval]) -> ResidualReport {
    ResidualReport {
        values: evals.iter().map(|e| e.residual).collect(),
        inadmissible: evals
            .iter()
            .enumerate()
            .filter(|(_, e)| !e.admissible)
            .map(|(a, _)| a)
            .collect(),
        min_margin: evals.iter().fold(f64::INFINITY, |a, e| a.min(e.margin)),
        f: evals.iter().map(|e| e.f).collect(),
    }
}

pub fn residual(problem: &DirichletProblem, u: &GridField) -> Result<ResidualReport> {
    residual_with(problem, u, 0.0, Exec::default())
}

/// As [`residual`] with cone threshold `σ_j > eps`.
pub fn residual_with(problem: &DirichletProblem, u: &GridField, eps: f64, exec: Exec) -> Result<ResidualReport> {
    check_field(problem, u)?;
    let evals = eval_all(problem, u, &RhsPath::target(&problem.rhs), eps, false, exec)?;
    Ok(report_of(&evals))
}

fn check_field(problem: &DirichletProblem, u: &GridField) -> Result<()> {
    if u.grid.domain != problem.domain || u.values.len() != u.grid.len() {
        return Err(Error::Domain("field does not live on the problem domain".into()));
    }
    Ok(())
}

pub(crate) fn sparse_solve(m: usize, triplets: &[Triplet<usize, usize, f64>], rhs: &[f64]) -> Result<Vec<f64>> {
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(m, m, triplets)
        .map_err(|e| Error::LinearSolve(format!("{e:?}")))?;
    let lu = a.sp_lu().map_err(|e| Error::LinearSolve(format!("{e:?}")))?;
    let b = Col::<f64>::from_fn(m, |i| rhs[i]);
    let x = lu.solve(&b);
    let out: Vec<f64> = (0..m).map(|i| x[i]).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::LinearSolve("singular Jacobian".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    /// Homotopy parameter (1 for a plain solve).
    pub t: f64,
    pub iter: usize,
    pub residual_sup: f64,
    pub residual_l2: f64,
    /// Accepted step length; 0 for the starting iterate.
    pub step: f64,
    pub min_margin: f64,
    pub monitors: Monitors,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub history: Vec<IterRecord>,
    pub converged: bool,
    pub f_scale: f64,
    pub tolerance: f64,
    /// Why the solve stopped, when it did not converge.
    pub failure: Option<String>,
}

impl SolveDiagnostics {
    pub fn iterations(&self) -> usize {
        self.history.iter().filter(|r| r.step > 0.0).count()
    }

    pub fn final_residual(&self) -> f64 {
        self.history.last().map_or(f64::INFINITY, |r| r.residual_sup)
    }

    pub fn all_admissible(&self, eps: f64) -> bool {
        self.history.iter().all(|r| r.min_margin >= eps)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "t,iter,residual_sup,residual_l2,step,min_margin,global_sup,interior_sup,pogorelov_sup\n",
        );
        for r in &self.history {
            let _ = writeln!(
                out,
                "{:?},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                r.t,
                r.iter,
                r.residual_sup,
                r.residual_l2,
                r.step,
                r.min_margin,
                r.monitors.global_sup,
                r.monitors.interior_sup,
                r.monitors.pogorelov_sup
            );
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub field: GridField,
    pub diagnostics: SolveDiagnostics,
}

impl Solution {
    /// The solution, or a nonconvergence error carrying the stop reason.
    pub fn into_result(self) -> Result<(GridField, SolveDiagnostics)> {
        if self.diagnostics.converged {
            return Ok((self.field, self.diagnostics));
        }
        Err(Error::NonConvergence(format!(
            "{} (last sup residual {:e})",
            self.diagnostics.failure.as_deref().unwrap_or("no convergence"),
            self.diagnostics.final_residual()
        )))
    }
}

/// Damped Newton from `field`, appending to `diag`. Returns whether it
/// converged; errors only for hard failures (positivity, evaluation).
fn newton_loop(
    problem: &DirichletProblem,
    field: &mut GridField,
    path: &RhsPath<'_>,
    cfg: &SolverConfig,
    tol: f64,
    diag: &mut SolveDiagnostics,
) -> Result<bool> {
    let m = field.grid.interior().len();
    let mut evals = eval_all(problem, field, path, cfg.eps_cone, true, cfg.exec)?;
    let mut rep = report_of(&evals);
    if !rep.admissible() {
        diag.failure = Some(format!(
            "starting iterate leaves the cone at {} nodes",
            rep.inadmissible.len()
        ));
        return Ok(false);
    }
    let record = |diag: &mut SolveDiagnostics, rep: &ResidualReport, field: &GridField, iter, step| -> Result<()> {
        diag.history.push(IterRecord {
            t: path.t,
            iter,
            residual_sup: rep.sup(),
            residual_l2: rep.l2(),
            step,
            min_margin: rep.min_margin,
            monitors: monitor_estimates_with(field, cfg.beta, cfg.norm, cfg.exec)?,
        });
        Ok(())
    };
    record(diag, &rep, field, 0, 0.0)?;
    for iter in 1..=cfg.max_iter {
        if rep.sup() < tol {
            return Ok(true);
        }
        let mut triplets = Vec::with_capacity(m * (1 + 2 * field.grid.dim()).pow(2));
        for (a, e) in evals.iter().enumerate() {
            triplets.extend(e.row.iter().map(|&(c, v)| Triplet::new(a, c, v)));
        }
        let neg: Vec<f64> = rep.values.iter().map(|v| -v).collect();
        let delta = sparse_solve(m, &triplets, &neg)?;
        let merit = rep.l2();
        let mut step = 1.0;
        loop {
            let mut trial = field.clone();
            for (a, &p) in field.grid.interior().iter().enumerate() {
                trial.values[p] += step * delta[a];
            }
            let accepted = match eval_all(problem, &trial, path, cfg.eps_cone, true, cfg.exec) {
                Ok(te) => {
                    let tr = report_of(&te);
                    if tr.admissible() && tr.l2() < merit {
                        Some((trial, te, tr))
                    } else {
                        None
                    }
                }
                // leaving the region where f is positive counts as a failed trial
                Err(Error::Positivity(_)) | Err(Error::Expr(_)) => None,
                Err(e) => return Err(e),
            };
            if let Some((trial, te, tr)) = accepted {
                *field = trial;
                evals = te;
                rep = tr;
                break;
            }
            step *= cfg.backtrack;
            if step < cfg.min_step {
                diag.failure = Some(format!("line search stalled at iteration {iter}"));
                return Ok(false);
            }
        }
        record(diag, &rep, field, iter, step)?;
    }
    if rep.sup() < tol {
        return Ok(true);
    }
    diag.failure = Some(format!("no convergence in {} iterations", cfg.max_iter));
    Ok(false)
}

/// Default starting iterate: the bowl `A|x − c|²/2` plus the discrete
/// harmonic extension of the boundary mismatch. The trace of the harmonic
/// part vanishes, so `U = (θn − μ) A I − μ D²H + χ`, which is admissible once
/// `A` is large enough.
pub fn initial_iterate(problem: &DirichletProblem, grid: &Grid, cfg: &SolverConfig) -> Result<GridField> {
    let n = grid.dim();
    let c = problem.domain.center();
    let bowl = |x: &[f64]| -> f64 { 0.5 * x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() };
    let interior = grid.interior();

    // geometric mean of f at (x, 0, 0)
    let zeros = vec![0.0; n];
    let mut log_sum = 0.0;
    for &p in interior {
        let x = grid.coords(p);
        let f = problem.rhs.value(&x, 0.0, &zeros)?;
        if !(f > 0.0) {
            return Err(Error::Positivity(format!("f = {f} at x = {x:?}")));
        }
        log_sum += f.ln();
    }
    let fbar = (log_sum / interior.len() as f64).exp();
    let op = problem.op;
    let ratio = binomial(n, op.k) / binomial(n, op.l);
    let lam = (fbar / ratio).powf(1.0 / op.degree() as f64);
    let spread = problem.params.theta * n as f64 - problem.params.mu;
    let mut a_coef = cfg.bowl_scale * lam / spread;

    // harmonic correction H with H = g − bowl on the boundary
    let m = interior.len();
    let h2 = grid.h * grid.h;
    let mut triplets = Vec::with_capacity(m * (2 * n + 1));
    let mut rhs_unit = vec![0.0; m];
    let mut rhs_g = vec![0.0; m];
    let mut gvals = vec![0.0; grid.len()];
    for &p in grid.boundary() {
        gvals[p] = problem.boundary_value(&grid.coords(p))?;
    }
    for (a, &p) in interior.iter().enumerate() {
        triplets.push(Triplet::new(a, a, -2.0 * n as f64 / h2));
        for i in 0..n {
            let s = grid.stride(i);
            for q in [p + s, p - s] {
                match grid.unknown_of(q) {
                    Some(col) => triplets.push(Triplet::new(a, col, 1.0 / h2)),
                    None => {
                        // Δ_h H = 0 moves the known value to the right side
                        rhs_unit[a] -= bowl(&grid.coords(q)) / h2;
                        rhs_g[a] -= gvals[q] / h2;
                    }
                }
            }
        }
    }
    let hg = sparse_solve(m, &triplets, &rhs_g)?;
    let hb = sparse_solve(m, &triplets, &rhs_unit)?;
    for _ in 0..64 {
        let mut values = gvals.clone();
        for (a, &p) in interior.iter().enumerate() {
            values[p] = a_coef * (bowl(&grid.coords(p)) - hb[a]) + hg[a];
        }
        let field = GridField {
            grid: grid.clone(),
            values,
        };
        let evals = eval_all(problem, &field, &RhsPath::target(&problem.rhs), cfg.eps_cone, false, cfg.exec);
        match evals {
            Ok(e) if report_of(&e).admissible() => return Ok(field),
            Ok(_) | Err(Error::Positivity(_)) | Err(Error::Expr(_)) => {}
            Err(e) => return Err(e),
        }
        a_coef *= 2.0;
    }
    Err(Error::Initialization(
        "bowl curvature grew past 2^64 times its initial value without reaching the cone".into(),
    ))
}

pub fn newton_solve(problem: &DirichletProblem, points: usize, cfg: &SolverConfig) -> Result<(GridField, SolveDiagnostics)> {
    newton_solve_report(problem, points, cfg, None)?.into_result()
}

/// Damped Newton from `start` (default: [`initial_iterate`]). A failed solve
/// is returned with `converged = false` rather than as an error.
pub fn newton_solve_report(
    problem: &DirichletProblem,
    points: usize,
    cfg: &SolverConfig,
    start: Option<GridField>,
) -> Result<Solution> {
    let grid = problem.grid(points)?;
    let mut field = match start {
        Some(f) => {
            check_field(problem, &f)?;
            f
        }
        None => initial_iterate(problem, &grid, cfg)?,
    };
    let path = RhsPath::target(&problem.rhs);
    let f_scale = f_scale_of(problem, &field, &path, cfg)?;
    let tol = cfg.tol * f_scale;
    let mut diag = SolveDiagnostics {
        f_scale,
        tolerance: tol,
        ..Default::default()
    };
    diag.converged = newton_loop(problem, &mut field, &path, cfg, tol, &mut diag)?;
    Ok(Solution {
        field,
        diagnostics: diag,
    })
}

fn f_scale_of(problem: &DirichletProblem, field: &GridField, path: &RhsPath<'_>, cfg: &SolverConfig) -> Result<f64> {
    let evals = eval_all(problem, field, path, cfg.eps_cone, false, cfg.exec)?;
    Ok(evals.iter().fold(1.0f64, |a, e| a.max(e.f.abs())))
}

pub fn continuation_solve(problem: &DirichletProblem, points: usize, cfg: &SolverConfig) -> Result<(GridField, SolveDiagnostics)> {
    continuation_solve_report(problem, points, cfg, None)?.into_result()
}

/// Homotopy from `f₀ = Q(U[u₀])` at the starting iterate to the target
/// right-hand side, each stage warm-started by damped Newton. A failed stage
/// is retried with half the parameter step down to `min_dt`.
pub fn continuation_solve_report(
    problem: &DirichletProblem,
    points: usize,
    cfg: &SolverConfig,
    start: Option<GridField>,
) -> Result<Solution> {
    let grid = problem.grid(points)?;
    let mut field = match start {
        Some(f) => {
            check_field(problem, &f)?;
            f
        }
        None => initial_iterate(problem, &grid, cfg)?,
    };
    let f0 = start_values(problem, &field, cfg)?;
    let target = RhsPath::target(&problem.rhs);
    let f_scale = f_scale_of(problem, &field, &target, cfg)?.max(f0.iter().fold(1.0, |a: f64, v| a.max(*v)));
    let tol = cfg.tol * f_scale;
    let mut diag = SolveDiagnostics {
        f_scale,
        tolerance: tol,
        ..Default::default()
    };
    let mut t = 0.0;
    let mut dt = 1.0 / cfg.continuation_steps.max(1) as f64;
    let stage0 = RhsPath {
        rhs: &problem.rhs,
        t: 0.0,
        f0: Some(&f0),
    };
    if !newton_loop(problem, &mut field, &stage0, cfg, tol, &mut diag)? {
        return Ok(Solution {
            field,
            diagnostics: diag,
        });
    }
    while t < 1.0 {
        let next = (t + dt).min(1.0);
        let path = RhsPath {
            rhs: &problem.rhs,
            t: next,
            f0: Some(&f0),
        };
        let mut trial = field.clone();
        let mut stage = SolveDiagnostics::default();
        let ok = match newton_loop(problem, &mut trial, &path, cfg, tol, &mut stage) {
            Ok(ok) => ok,
            Err(Error::Positivity(_)) if next < 1.0 => false,
            Err(e) => return Err(e),
        };
        diag.history.extend(stage.history);
        if ok {
            field = trial;
            t = next;
            continue;
        }
        dt *= 0.5;
        if dt < cfg.min_dt * (1.0 - 1e-12) {
            diag.failure = Some(format!(
                "continuation stalled at t = {t} ({})",
                stage.failure.unwrap_or_default()
            ));
            return Ok(Solution {
                field,
                diagnostics: diag,
            });
        }
    }
    diag.converged = true;
    Ok(Solution {
        field,
        diagnostics: diag,
    })
}

/// `Q(λ(U[u]))` per interior node; the homotopy's starting right-hand side.
fn start_values(problem: &DirichletProblem, field: &GridField, cfg: &SolverConfig) -> Result<Vec<f64>> {
    let one = Rhs::constant(1.0);
    let path = RhsPath::target(&one);
    let evals = eval_all(problem, field, &path, cfg.eps_cone, false, cfg.exec)?;
    if evals.iter().any(|e| !e.admissible) {
        return Err(Error::Initialization("starting iterate is not admissible".into()));
    }
    Ok(evals.iter().map(|e| e.residual + 1.0).collect())
}

/// The quotient value of a radial function `g(|x|)` whose Hessian has
/// eigenvalues `g″` (radial) and `g′/ρ` (the remaining `n − 1`).
pub fn radial_rhs(op: QuotientOp, params: &EtaParams, g2: f64, g1_over_r: f64) -> f64 {
    let mut kappa = vec![g1_over_r; op.n];
    kappa[0] = g2;
    let lam = params.map_eigenvalues(&kappa);
    let s = sigma_all(&lam);
    s[op.k] / s[op.l]
}

/// JSON description of a Dirichlet problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub domain: Domain,
    pub k: usize,
    pub l: usize,
    #[serde(default = "one")]
    pub theta: f64,
    #[serde(default = "one")]
    pub mu: f64,
    /// Row-major symmetric offset, `n × n` entries.
    #[serde(default)]
    pub chi: Option<Vec<f64>>,
    pub rhs: String,
    pub boundary: String,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default)]
    pub boundary_mode: BoundaryMode,
    #[serde(default)]
    pub continuation: bool,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn one() -> f64 {
    1.0
}

fn default_points() -> usize {
    17
}

impl ProblemConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Input(format!("problem config: {e}")))
    }

    pub fn to_problem(&self) -> Result<DirichletProblem> {
        let n = self.domain.dim();
        let op = QuotientOp::new(n, self.k, self.l)?;
        let chi = match &self.chi {
            None => None,
            Some(v) if v.len() == n * n => Some(DMatrix::from_row_slice(n, n, v)),
            Some(v) => {
                return Err(Error::Input(format!("chi needs {} entries, got {}", n * n, v.len())))
            }
        };
        let params = EtaParams::new(self.theta, self.mu, chi)?;
        let mut p = DirichletProblem::new(
            op,
            params,
            Rhs::parse(&self.rhs, n)?,
            BoundaryData::parse(&self.boundary, n)?,
            self.domain.clone(),
        )?;
        p.boundary_mode = self.boundary_mode;
        Ok(p)
    }
}
