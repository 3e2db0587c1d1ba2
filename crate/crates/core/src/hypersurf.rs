//! Hypersurface geometry: graphs over Euclidean domains and radial graphs
//! over the round sphere in a warped product `dr² + φ(r)² σ`.
//!
//! Besides the curvature assembly this module holds the barrier checker and
//! the geodesic-sphere oracle for the prescribed-curvature problem, a small
//! Newton solver for radial graphs with `σ₁(η) = Ψ(r)` over `S²`, and
//! finite-difference residuals for the support-function identities, the
//! Codazzi and commutator formulas, and the normal-component identity used
//! in interior curvature estimates.

use std::f64::consts::PI;
use std::fmt::Write as _;

use faer::sparse::Triplet;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etacalc::{quotient_gradient, sym_eigen_sorted, EtaParams};
use crate::expr::{Bindings, Expr, Var};
use crate::gridpde::{discretize_at, sparse_solve, Domain, Grid, GridField, NodeKind};
use crate::par::{map_range, Exec};
use crate::symcone::{cone_of_slice, quotient_unchecked, QuotientOp};

// ---------------------------------------------------------------------------
// Warping functions

#[derive(Clone, Debug, PartialEq)]
pub enum WarpKind {
    /// `φ = r`: Euclidean space.
    Euclidean,
    /// `φ = sin r`: the round sphere.
    Spherical,
    /// `φ = sinh r`: hyperbolic space.
    Hyperbolic,
    /// Any positive increasing `φ(r)` given as an expression in `r`.
    Custom(Expr),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarpValues {
    pub phi: f64,
    pub dphi: f64,
    pub ddphi: f64,
}

/// A warping function on the open interval `(lo, hi)`.
#[derive(Clone, Debug)]
pub struct WarpModel {
    kind: WarpKind,
    lo: f64,
    hi: f64,
    derivs: Option<(Expr, Expr)>,
}

const WARP_SAMPLES: usize = 257;

impl WarpModel {
    pub fn euclidean() -> Self {
        Self::new(WarpKind::Euclidean, 0.0, f64::INFINITY).expect("builtin warp")
    }

    pub fn spherical() -> Self {
        Self::new(WarpKind::Spherical, 0.0, PI / 2.0).expect("builtin warp")
    }

    pub fn hyperbolic() -> Self {
        Self::new(WarpKind::Hyperbolic, 0.0, f64::INFINITY).expect("builtin warp")
    }

    /// Checks `φ > 0` and `φ′ > 0` by sampling the interval.
    pub fn new(kind: WarpKind, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || lo.is_nan() {
            return Err(Error::Domain(format!("warp interval ({lo}, {hi}) is empty")));
        }
        let (natural_lo, natural_hi) = match kind {
            WarpKind::Spherical => (0.0, PI / 2.0),
            WarpKind::Euclidean | WarpKind::Hyperbolic => (0.0, f64::INFINITY),
            WarpKind::Custom(_) => (f64::NEG_INFINITY, f64::INFINITY),
        };
        if lo < natural_lo || hi > natural_hi + 1e-15 {
            return Err(Error::Domain(format!(
                "interval ({lo}, {hi}) leaves ({natural_lo}, {natural_hi}) where phi and phi' are positive"
            )));
        }
        let derivs = match &kind {
            WarpKind::Custom(e) => {
                if e.mentions(&|v| !matches!(v, Var::R | Var::Pi)) {
                    return Err(Error::Input("warp expression may only use r".into()));
                }
                if !hi.is_finite() || !lo.is_finite() {
                    return Err(Error::Domain("a custom warp needs a bounded interval".into()));
                }
                let d = e.derivative(Var::R);
                let dd = d.derivative(Var::R);
                Some((d, dd))
            }
            _ => None,
        };
        let model = WarpModel { kind, lo, hi, derivs };
        let span = if hi.is_finite() { hi - lo } else { 50.0 };
        for i in 0..WARP_SAMPLES {
            let r = lo + span * (i as f64 + 0.5) / WARP_SAMPLES as f64;
            let w = model.eval(r)?;
            if !(w.phi > 0.0 && w.dphi > 0.0) || !w.ddphi.is_finite() {
                return Err(Error::Domain(format!(
                    "warp needs phi > 0 and phi' > 0, got phi = {}, phi' = {} at r = {r}",
                    w.phi, w.dphi
                )));
            }
        }
        Ok(model)
    }

    /// Recognizes `r`, `sin(r)` and `sinh(r)`; anything else is custom.
    pub fn from_expr(e: Expr, lo: Option<f64>, hi: Option<f64>) -> Result<Self> {
        let kind = if e == Expr::parse("r")? {
            WarpKind::Euclidean
        } else if e == Expr::parse("sin(r)")? {
            WarpKind::Spherical
        } else if e == Expr::parse("sinh(r)")? {
            WarpKind::Hyperbolic
        } else {
            WarpKind::Custom(e)
        };
        let (dlo, dhi) = match kind {
            WarpKind::Spherical => (0.0, PI / 2.0),
            WarpKind::Custom(_) => (f64::NAN, f64::NAN),
            _ => (0.0, f64::INFINITY),
        };
        let lo = lo.unwrap_or(dlo);
        let hi = hi.unwrap_or(dhi);
        if lo.is_nan() || hi.is_nan() {
            return Err(Error::Input("a custom warp needs an explicit interval".into()));
        }
        Self::new(kind, lo, hi)
    }

    pub fn parse(text: &str, lo: Option<f64>, hi: Option<f64>) -> Result<Self> {
        Self::from_expr(Expr::parse(text)?, lo, hi)
    }

    pub fn kind(&self) -> &WarpKind {
        &self.kind
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn contains(&self, r: f64) -> bool {
        r > self.lo && r < self.hi
    }

    /// Sectional curvature of the ambient space form, if it is one.
    pub fn curvature(&self) -> Option<f64> {
        match self.kind {
            WarpKind::Euclidean => Some(0.0),
            WarpKind::Spherical => Some(1.0),
            WarpKind::Hyperbolic => Some(-1.0),
            WarpKind::Custom(_) => None,
        }
    }

    pub fn name(&self) -> String {
        match &self.kind {
            WarpKind::Euclidean => "r".into(),
            WarpKind::Spherical => "sin(r)".into(),
            WarpKind::Hyperbolic => "sinh(r)".into(),
            WarpKind::Custom(e) => e.to_string(),
        }
    }

    pub fn eval(&self, r: f64) -> Result<WarpValues> {
        if !self.contains(r) {
            return Err(Error::Domain(format!(
                "r = {r} outside the warp interval ({}, {})",
                self.lo, self.hi
            )));
        }
        Ok(match &self.kind {
            WarpKind::Euclidean => WarpValues { phi: r, dphi: 1.0, ddphi: 0.0 },
            WarpKind::Spherical => WarpValues { phi: r.sin(), dphi: r.cos(), ddphi: -r.sin() },
            WarpKind::Hyperbolic => WarpValues { phi: r.sinh(), dphi: r.cosh(), ddphi: r.sinh() },
            WarpKind::Custom(e) => {
                let (d, dd) = self.derivs.as_ref().expect("custom warp has derivatives");
                let b = Bindings::radius(r);
                WarpValues { phi: e.eval(&b)?, dphi: d.eval(&b)?, ddphi: dd.eval(&b)? }
            }
        })
    }

    /// `h = φ′/φ`.
    pub fn h(&self, r: f64) -> Result<f64> {
        let w = self.eval(r)?;
        Ok(w.dphi / w.phi)
    }

    /// `Φ(r) = ∫ φ`, from 0 for the space forms and from the lower end of
    /// the interval for a custom warp.
    pub fn big_phi(&self, r: f64) -> Result<f64> {
        if !self.contains(r) {
            return Err(Error::Domain(format!("r = {r} outside the warp interval")));
        }
        Ok(match &self.kind {
            WarpKind::Euclidean => 0.5 * r * r,
            WarpKind::Spherical => 1.0 - r.cos(),
            WarpKind::Hyperbolic => r.cosh() - 1.0,
            WarpKind::Custom(e) => gauss_legendre(self.lo, r, |s| e.eval(&Bindings::radius(s)))?,
        })
    }
}

fn gauss_legendre(a: f64, b: f64, f: impl Fn(f64) -> std::result::Result<f64, crate::expr::ExprError>) -> Result<f64> {
    const X: [f64; 5] = [
        0.0,
        0.538_469_310_105_683_1,
        -0.538_469_310_105_683_1,
        0.906_179_845_938_664,
        -0.906_179_845_938_664,
    ];
    const W: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let panels = 64;
    let w = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * w;
        for (x, wt) in X.iter().zip(W) {
            total += wt * f(mid + 0.5 * w * x)?;
        }
    }
    Ok(0.5 * w * total)
}

// ---------------------------------------------------------------------------
// Sphere mesh and radial graphs

/// Cell-centred latitude-longitude mesh on `S²`.
///
/// Colatitudes are `θ_i = (i + ½)π/n_lat` and longitudes `ϕ_j = 2πj/n_lon`.
/// No node sits on a pole; a stencil leaving the first or last row wraps
/// over the pole to the row itself at longitude `ϕ + π`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SphereMesh {
    pub n_lat: usize,
    pub n_lon: usize,
}

impl SphereMesh {
    pub fn new(n_lat: usize, n_lon: usize) -> Result<Self> {
        if n_lat < 4 || n_lon < 4 || !n_lon.is_multiple_of(2) {
            return Err(Error::Domain(format!(
                "sphere mesh needs n_lat >= 4 and an even n_lon >= 4, got {n_lat} x {n_lon}"
            )));
        }
        Ok(SphereMesh { n_lat, n_lon })
    }

    pub fn len(&self) -> usize {
        self.n_lat * self.n_lon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_theta(&self) -> f64 {
        PI / self.n_lat as f64
    }

    pub fn d_phi(&self) -> f64 {
        2.0 * PI / self.n_lon as f64
    }

    pub fn colatitude(&self, p: usize) -> f64 {
        (((p / self.n_lon) as f64) + 0.5) * self.d_theta()
    }

    pub fn longitude(&self, p: usize) -> f64 {
        (p % self.n_lon) as f64 * self.d_phi()
    }

    pub fn unit(&self, p: usize) -> [f64; 3] {
        let (t, f) = (self.colatitude(p), self.longitude(p));
        [t.sin() * f.cos(), t.sin() * f.sin(), t.cos()]
    }

    /// Node at row `i`, column `j`, reflecting rows across the poles.
    fn wrap(&self, i: isize, j: isize) -> usize {
        let (nl, nf) = (self.n_lat as isize, self.n_lon as isize);
        let (mut i, mut j) = (i, j);
        if i < 0 {
            i = -1 - i;
            j += nf / 2;
        } else if i >= nl {
            i = 2 * nl - 1 - i;
            j += nf / 2;
        }
        (i * nf + j.rem_euclid(nf)) as usize
    }

    /// The 3×3 stencil of `p`, including pole reflection.
    fn stencil(&self, p: usize) -> [usize; 9] {
        let (i, j) = ((p / self.n_lon) as isize, (p % self.n_lon) as isize);
        let mut out = [0; 9];
        for a in -1..=1isize {
            for b in -1..=1isize {
                out[((a + 1) * 3 + b + 1) as usize] = self.wrap(i + a, j + b);
            }
        }
        out
    }
}

/// A starshaped surface `{(r(z), z) : z ∈ S²}` sampled on a sphere mesh.
#[derive(Clone, Debug)]
pub struct RadialGraph {
    pub warp: WarpModel,
    pub mesh: SphereMesh,
    pub r: Vec<f64>,
}

impl RadialGraph {
    pub fn new(warp: WarpModel, mesh: SphereMesh, r: Vec<f64>) -> Result<Self> {
        if r.len() != mesh.len() {
            return Err(Error::Domain(format!("expected {} radii, got {}", mesh.len(), r.len())));
        }
        if let Some((p, v)) = r.iter().enumerate().find(|(_, v)| !warp.contains(**v)) {
            return Err(Error::Domain(format!("r = {v} at node {p} lies outside the warp interval")));
        }
        Ok(RadialGraph { warp, mesh, r })
    }

    pub fn constant(warp: WarpModel, mesh: SphereMesh, r0: f64) -> Result<Self> {
        Self::new(warp, mesh, vec![r0; mesh.len()])
    }

    /// Radii from a function of the unit vector.
    pub fn from_fn(warp: WarpModel, mesh: SphereMesh, f: impl Fn([f64; 3]) -> f64) -> Result<Self> {
        let r = (0..mesh.len()).map(|p| f(mesh.unit(p))).collect();
        Self::new(warp, mesh, r)
    }

    /// Radii from an expression in the unit-vector components `x1, x2, x3`.
    pub fn from_expr(warp: WarpModel, mesh: SphereMesh, e: &Expr) -> Result<Self> {
        if e.mentions(&|v| !matches!(v, Var::X(_) | Var::Pi)) || e.max_coordinate_index() > 3 {
            return Err(Error::Input("radial graph expression may only use x1, x2, x3".into()));
        }
        let mut r = Vec::with_capacity(mesh.len());
        for p in 0..mesh.len() {
            r.push(e.eval(&Bindings::point(&mesh.unit(p)))?);
        }
        Self::new(warp, mesh, r)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("node,lat,lon,r\n");
        for p in 0..self.mesh.len() {
            let _ = writeln!(
                out,
                "{p},{:?},{:?},{:?}",
                PI / 2.0 - self.mesh.colatitude(p),
                self.mesh.longitude(p),
                self.r[p]
            );
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
struct Jet {
    r: f64,
    rt: f64,
    rp: f64,
    rtt: f64,
    rtp: f64,
    rpp: f64,
}

fn jet(mesh: &SphereMesh, r: &[f64], p: usize) -> Jet {
    let s = mesh.stencil(p);
    let at = |a: usize, b: usize| r[s[a * 3 + b]];
    let (dt, dp) = (mesh.d_theta(), mesh.d_phi());
    let c = at(1, 1);
    Jet {
        r: c,
        rt: (at(2, 1) - at(0, 1)) / (2.0 * dt),
        rp: (at(1, 2) - at(1, 0)) / (2.0 * dp),
        rtt: (at(2, 1) - 2.0 * c + at(0, 1)) / (dt * dt),
        rpp: (at(1, 2) - 2.0 * c + at(1, 0)) / (dp * dp),
        rtp: (at(2, 2) - at(2, 0) - at(0, 2) + at(0, 0)) / (4.0 * dt * dp),
    }
}

/// Induced metric, second fundamental form and `v = √(φ² + |∇′r|²)` in
/// the `(θ, ϕ)` coordinates, oriented so spheres have positive curvature.
fn radial_forms(w: WarpValues, theta: f64, d: &Jet) -> (DMatrix<f64>, DMatrix<f64>, f64) {
    let (s, c) = theta.sin_cos();
    let v = (w.phi * w.phi + d.rt * d.rt + d.rp * d.rp / (s * s)).sqrt();
    let sigma = [1.0, s * s];
    let grad = [d.rt, d.rp];
    // covariant Hessian of r for the round metric
    let hess = [[d.rtt, d.rtp - c / s * d.rp], [d.rtp - c / s * d.rp, d.rpp + s * c * d.rt]];
    let g = DMatrix::from_fn(2, 2, |i, j| {
        grad[i] * grad[j] + if i == j { w.phi * w.phi * sigma[i] } else { 0.0 }
    });
    let h = DMatrix::from_fn(2, 2, |i, j| {
        let diag = if i == j { w.phi * w.phi * w.dphi * sigma[i] } else { 0.0 };
        (-w.phi * hess[i][j] + 2.0 * w.dphi * grad[i] * grad[j] + diag) / v
    });
    (g, h, v)
}

/// Principal curvatures (descending) and a `g`-orthonormal principal frame.
pub fn principal_curvatures(g: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let chol = g
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("induced metric is not positive definite".into()))?;
    let l_inv = chol
        .l()
        .try_inverse()
        .ok_or_else(|| Error::Domain("induced metric is singular".into()))?;
    let m = &l_inv * h * l_inv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let (vals, vecs) = sym_eigen_sorted(&m);
    let n = vals.len();
    let frame = l_inv.transpose() * vecs;
    let kappa = vals.iter().rev().copied().collect();
    let frame = DMatrix::from_fn(n, n, |i, a| frame[(i, n - 1 - a)]);
    Ok((kappa, frame))
}

// ---------------------------------------------------------------------------
// Surface geometry

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SurfaceKind {
    Graph,
    Radial,
}

#[derive(Clone, Debug)]
pub struct NodeGeometry {
    pub node: usize,
    /// `(lat, lon)` for radial graphs, `x` for Euclidean graphs.
    pub position: Vec<f64>,
    /// `r` for radial graphs, `u` for Euclidean graphs.
    pub height: f64,
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub kappa: Vec<f64>,
    pub eta: Vec<f64>,
    /// `ν^{n+1} = 1/√(1+|Du|²)`; Euclidean graphs only.
    pub nu_top: Option<f64>,
    pub tau: f64,
    pub big_phi: f64,
}

#[derive(Clone, Debug)]
pub struct SurfaceGeometry {
    pub kind: SurfaceKind,
    pub dim: usize,
    pub nodes: Vec<NodeGeometry>,
}

fn node_geometry(
    node: usize,
    position: Vec<f64>,
    height: f64,
    g: DMatrix<f64>,
    h: DMatrix<f64>,
    nu_top: Option<f64>,
    tau: f64,
    big_phi: f64,
) -> Result<NodeGeometry> {
    let (kappa, _) = principal_curvatures(&g, &h)?;
    let eta = EtaParams::newton().map_eigenvalues(&kappa);
    Ok(NodeGeometry { node, position, height, g, h, kappa, eta, nu_top, tau, big_phi })
}

impl SurfaceGeometry {
    /// `σ_k(η)/σ_l(η)` per node; `None` where `η ∉ Γ_k`.
    pub fn quotient_values(&self, op: QuotientOp) -> Result<Vec<Option<f64>>> {
        op.check_len(self.dim)?;
        Ok(self
            .nodes
            .iter()
            .map(|n| cone_of_slice(op.k, &n.eta, 0.0).inside.then(|| quotient_unchecked(op, &n.eta)))
            .collect())
    }

    pub fn to_csv(&self) -> String {
        let n = self.dim;
        let mut out = String::from("node,");
        match self.kind {
            SurfaceKind::Radial => out.push_str("lat,lon,r,"),
            SurfaceKind::Graph => {
                for i in 1..=n {
                    let _ = write!(out, "x{i},");
                }
                out.push_str("u,");
            }
        }
        for i in 1..=n {
            let _ = write!(out, "kappa{i},");
        }
        for i in 1..=n {
            let _ = write!(out, "eta{i},");
        }
        if self.kind == SurfaceKind::Graph {
            out.push_str("nu_top,");
        }
        out.push_str("tau,big_phi\n");
        for g in &self.nodes {
            let _ = write!(out, "{},", g.node);
            for v in g.position.iter().chain([&g.height]).chain(&g.kappa).chain(&g.eta) {
                let _ = write!(out, "{v:?},");
            }
            if let Some(nu) = g.nu_top {
                let _ = write!(out, "{nu:?},");
            }
            let _ = writeln!(out, "{:?},{:?}", g.tau, g.big_phi);
        }
        out
    }
}

pub fn radial_geometry(graph: &RadialGraph) -> Result<SurfaceGeometry> {
    radial_geometry_with(graph, Exec::default())
}

pub fn radial_geometry_with(graph: &RadialGraph, exec: Exec) -> Result<SurfaceGeometry> {
    let mesh = graph.mesh;
    let nodes = map_range(exec, mesh.len(), |p| {
        let d = jet(&mesh, &graph.r, p);
        let w = graph.warp.eval(d.r)?;
        let theta = mesh.colatitude(p);
        let (g, h, v) = radial_forms(w, theta, &d);
        node_geometry(
            p,
            vec![PI / 2.0 - theta, mesh.longitude(p)],
            d.r,
            g,
            h,
            None,
            w.phi * w.phi / v,
            graph.warp.big_phi(d.r)?,
        )
    });
    Ok(SurfaceGeometry { kind: SurfaceKind::Radial, dim: 2, nodes: nodes.into_iter().collect::<Result<_>>()? })
}

fn graph_node(u: &GridField, p: usize) -> Result<NodeGeometry> {
    let d = discretize_at(u, p)?;
    let x = u.grid.coords(p);
    let n = x.len();
    let w = (1.0 + d.du.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let g = DMatrix::from_fn(n, n, |i, j| d.du[i] * d.du[j] + if i == j { 1.0 } else { 0.0 });
    let h = &d.d2u / w;
    let height = u.values[p];
    let xdu: f64 = x.iter().zip(&d.du).map(|(a, b)| a * b).sum();
    let big_phi = 0.5 * (x.iter().map(|v| v * v).sum::<f64>() + height * height);
    node_geometry(p, x, height, g, h, Some(1.0 / w), (height - xdu) / w, big_phi)
}

/// Geometry of the graph of `u` at one interior node.
pub fn graph_geometry_at(u: &GridField, flat: usize) -> Result<NodeGeometry> {
    graph_node(u, flat)
}

/// Geometry of the graph of `u` at every interior node.
pub fn graph_geometry(u: &GridField) -> Result<SurfaceGeometry> {
    graph_geometry_with(u, Exec::default())
}

pub fn graph_geometry_with(u: &GridField, exec: Exec) -> Result<SurfaceGeometry> {
    let interior = u.grid.interior();
    if interior.is_empty() {
        return Err(Error::Stencil("grid has no interior nodes".into()));
    }
    let nodes = map_range(exec, interior.len(), |a| graph_node(u, interior[a]));
    Ok(SurfaceGeometry {
        kind: SurfaceKind::Graph,
        dim: u.grid.dim(),
        nodes: nodes.into_iter().collect::<Result<_>>()?,
    })
}

/// `[C(n,k)/C(n,l)]·[(n−1)h(r₀)]^{k−l}`: the quotient on the geodesic sphere
/// of radius `r₀`.
pub fn sphere_oracle(warp: &WarpModel, r0: f64, op: QuotientOp) -> Result<f64> {
    let h = warp.h(r0)?;
    Ok(op.unit_value() * ((op.n - 1) as f64 * h).powi(op.degree() as i32))
}

// ---------------------------------------------------------------------------
// Barrier conditions

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BarrierConfig {
    pub samples: usize,
    /// Sampled `r` range; defaults to `[r1, r2]` widened by a quarter of its
    /// length on each side and clipped to the warp interval.
    pub range: Option<[f64; 2]>,
    /// Relative size below which a strict margin counts as zero.
    pub zero_tol: f64,
    /// Relative tolerance for the difference-quotient monotonicity margin.
    pub derivative_tol: f64,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        BarrierConfig { samples: 512, range: None, zero_tol: 1e-12, derivative_tol: 1e-8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Inner,
    Transition,
    Outer,
}

impl Region {
    fn name(self) -> &'static str {
        match self {
            Region::Inner => "inner",
            Region::Transition => "transition",
            Region::Outer => "outer",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarrierSample {
    pub r: f64,
    pub psi: f64,
    pub threshold: f64,
    pub region: Region,
    /// `Ψ − thr`, `thr − Ψ`, or `−∂_r[φ^{k−l}Ψ]` depending on the region.
    pub margin: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConditionStatus {
    Holds,
    Marginal,
    Violated,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarrierCondition {
    pub name: &'static str,
    pub margin: f64,
    pub argmin: f64,
    pub status: ConditionStatus,
}

#[derive(Clone, Debug)]
pub struct BarrierReport {
    pub op: QuotientOp,
    pub r1: f64,
    pub r2: f64,
    pub samples: Vec<BarrierSample>,
    /// Inner (`Ψ > thr` for `r ≤ r1`), outer (`Ψ < thr` for `r ≥ r2`) and
    /// monotone (`∂_r[φ^{k−l}Ψ] ≤ 0` on `(r1, r2)`).
    pub conditions: [BarrierCondition; 3],
}

impl BarrierReport {
    /// Strict conditions hold strictly; the monotone one may be marginal.
    pub fn passed(&self) -> bool {
        self.conditions[0].status == ConditionStatus::Holds
            && self.conditions[1].status == ConditionStatus::Holds
            && self.conditions[2].status != ConditionStatus::Violated
    }

    pub fn zero_margin(&self) -> bool {
        self.conditions.iter().any(|c| c.status == ConditionStatus::Marginal)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,psi,threshold,region,margin\n");
        for s in &self.samples {
            let _ = writeln!(out, "{:?},{:?},{:?},{},{:?}", s.r, s.psi, s.threshold, s.region.name(), s.margin);
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("condition,margin,argmin_r,status\n");
        for c in &self.conditions {
            let status = match c.status {
                ConditionStatus::Holds => "holds",
                ConditionStatus::Marginal => "zero_margin",
                ConditionStatus::Violated => "violated",
            };
            let _ = writeln!(out, "{},{:?},{:?},{status}", c.name, c.margin, c.argmin);
        }
        out
    }
}

fn check_psi(psi: &Expr) -> Result<()> {
    if psi.mentions(&|v| !matches!(v, Var::R | Var::Pi)) {
        return Err(Error::Input("psi may only depend on r".into()));
    }
    Ok(())
}

fn eval_psi(psi: &Expr, r: f64) -> Result<f64> {
    psi.eval(&Bindings::radius(r))
        .map_err(|e| Error::Input(format!("psi cannot be evaluated at r = {r}: {e}")))
}

pub fn barrier_check(warp: &WarpModel, psi: &Expr, r1: f64, r2: f64, op: QuotientOp) -> Result<BarrierReport> {
    barrier_check_with(warp, psi, r1, r2, op, &BarrierConfig::default())
}

pub fn barrier_check_with(
    warp: &WarpModel,
    psi: &Expr,
    r1: f64,
    r2: f64,
    op: QuotientOp,
    cfg: &BarrierConfig,
) -> Result<BarrierReport> {
    check_psi(psi)?;
    if !(r1 < r2) || !warp.contains(r1) || !warp.contains(r2) {
        return Err(Error::Input(format!("need r1 < r2 inside the warp interval, got [{r1}, {r2}]")));
    }
    if cfg.samples < 2 {
        return Err(Error::Input("barrier check needs at least 2 samples".into()));
    }
    let (lo, hi) = warp.interval();
    let [a, b] = cfg.range.unwrap_or_else(|| {
        let pad = 0.25 * (r2 - r1);
        let b = if hi.is_finite() { (r2 + pad).min(0.5 * (r2 + hi)) } else { r2 + pad };
        [(r1 - pad).max(0.5 * (lo + r1)), b]
    });
    if !(a < b) || !warp.contains(a) || !warp.contains(b) {
        return Err(Error::Input(format!("sample range [{a}, {b}] must lie inside the warp interval")));
    }
    let mut rs: Vec<f64> = (0..cfg.samples)
        .map(|i| a + (b - a) * i as f64 / (cfg.samples - 1) as f64)
        .chain([r1, r2])
        .collect();
    rs.sort_by(f64::total_cmp);
    rs.dedup();

    let degree = op.degree() as i32;
    let weighted = |r: f64| -> Result<f64> { Ok(warp.eval(r)?.phi.powi(degree) * eval_psi(psi, r)?) };
    let step = f64::EPSILON.cbrt() * (r2 - r1);
    let mut samples = Vec::with_capacity(rs.len());
    for &r in &rs {
        let psi_r = eval_psi(psi, r)?;
        let threshold = sphere_oracle(warp, r, op)?;
        let (region, margin) = if r <= r1 {
            (Region::Inner, psi_r - threshold)
        } else if r >= r2 {
            (Region::Outer, threshold - psi_r)
        } else {
            let d = (weighted(r + step)? - weighted(r - step)?) / (2.0 * step);
            (Region::Transition, -d)
        };
        samples.push(BarrierSample { r, psi: psi_r, threshold, region, margin });
    }

    let condition = |name: &'static str, region: Region, tol: f64| -> BarrierCondition {
        let mine: Vec<&BarrierSample> = samples.iter().filter(|s| s.region == region).collect();
        let worst = mine.iter().min_by(|x, y| x.margin.total_cmp(&y.margin));
        let (margin, argmin) = worst.map_or((f64::INFINITY, f64::NAN), |s| (s.margin, s.r));
        let scale = mine
            .iter()
            .map(|s| match region {
                Region::Transition => weighted(s.r).map_or(1.0, |w| w.abs() / (r2 - r1)),
                _ => s.threshold.abs(),
            })
            .fold(1.0, f64::max);
        let status = if margin.is_nan() || margin < -tol * scale {
            ConditionStatus::Violated
        } else if margin <= tol * scale {
            ConditionStatus::Marginal
        } else {
            ConditionStatus::Holds
        };
        BarrierCondition { name, margin, argmin, status }
    };
    let conditions = [
        condition("inner", Region::Inner, cfg.zero_tol),
        condition("outer", Region::Outer, cfg.zero_tol),
        condition("monotone", Region::Transition, cfg.derivative_tol),
    ];
    Ok(BarrierReport { op, r1, r2, samples, conditions })
}

// ---------------------------------------------------------------------------
// Radial solver for σ₁(η) = Ψ(r) over S²

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RadialSolveConfig {
    pub n_lat: usize,
    pub n_lon: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Constant starting radius; defaults to `(r1 + r2)/2`.
    pub initial: Option<f64>,
    pub backtrack: f64,
    pub min_step: f64,
    pub fd_step: f64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for RadialSolveConfig {
    fn default() -> Self {
        RadialSolveConfig {
            n_lat: 32,
            n_lon: 64,
            tol: 1e-8,
            max_iter: 40,
            initial: None,
            backtrack: 0.5,
            min_step: 1.0 / 1024.0,
            fd_step: 1e-6,
            exec: Exec::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadialIter {
    pub iter: usize,
    pub residual_sup: f64,
    pub step: f64,
    pub r_min: f64,
    pub r_max: f64,
}

#[derive(Clone, Debug)]
pub struct RadialSolution {
    pub graph: RadialGraph,
    pub history: Vec<RadialIter>,
    pub converged: bool,
    /// Some iterate left `[r1, r2]`.
    pub left_band: bool,
    pub failure: Option<String>,
    /// The barrier report checked before solving, if any.
    pub barrier: Option<BarrierReport>,
}

impl RadialSolution {
    pub fn residual_sup(&self) -> f64 {
        self.history.last().map_or(f64::INFINITY, |h| h.residual_sup)
    }

    pub fn max_deviation(&self, r0: f64) -> f64 {
        self.graph.r.iter().map(|r| (r - r0).abs()).fold(0.0, f64::max)
    }

    pub fn into_result(self) -> Result<RadialSolution> {
        if self.converged {
            return Ok(self);
        }
        Err(Error::NonConvergence(format!(
            "{} (last sup residual {:e})",
            self.failure.as_deref().unwrap_or("no convergence"),
            self.residual_sup()
        )))
    }

    pub fn history_csv(&self) -> String {
        let mut out = String::from("iter,residual_sup,step,r_min,r_max\n");
        for h in &self.history {
            let _ = writeln!(out, "{},{:?},{:?},{:?},{:?}", h.iter, h.residual_sup, h.step, h.r_min, h.r_max);
        }
        out
    }
}

/// `σ₁(η) − Ψ(r)` at node `p` for `n = 2`, where `σ₁(η) = tr(g⁻¹h)`.
fn radial_residual_at(warp: &WarpModel, psi: &Expr, mesh: &SphereMesh, r: &[f64], p: usize) -> Result<f64> {
    let d = jet(mesh, r, p);
    let w = warp.eval(d.r)?;
    let (g, h, _) = radial_forms(w, mesh.colatitude(p), &d);
    let det = g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(0, 1)];
    let trace = (g[(1, 1)] * h[(0, 0)] - 2.0 * g[(0, 1)] * h[(0, 1)] + g[(0, 0)] * h[(1, 1)]) / det;
    Ok(trace - eval_psi(psi, d.r)?)
}

fn radial_residual(warp: &WarpModel, psi: &Expr, mesh: &SphereMesh, r: &[f64], exec: Exec) -> Result<Vec<f64>> {
    map_range(exec, mesh.len(), |p| radial_residual_at(warp, psi, mesh, r, p)).into_iter().collect()
}

/// Distance-2 colouring of the stencil graph, for compressed differencing.
struct Coloring {
    groups: Vec<Vec<usize>>,
    rows_of: Vec<Vec<usize>>,
}

impl Coloring {
    fn new(mesh: &SphereMesh) -> Self {
        let m = mesh.len();
        let mut rows_of = vec![Vec::new(); m];
        for p in 0..m {
            let mut s = mesh.stencil(p).to_vec();
            s.sort_unstable();
            s.dedup();
            for c in s {
                rows_of[c].push(p);
            }
        }
        let mut color = vec![usize::MAX; m];
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for c in 0..m {
            let mut used = Vec::new();
            for &p in &rows_of[c] {
                for q in mesh.stencil(p) {
                    if color[q] != usize::MAX {
                        used.push(color[q]);
                    }
                }
            }
            let k = (0..).find(|k| !used.contains(k)).expect("a free colour exists");
            color[c] = k;
            if k == groups.len() {
                groups.push(Vec::new());
            }
            groups[k].push(c);
        }
        Coloring { groups, rows_of }
    }
}

fn radial_jacobian(
    warp: &WarpModel,
    psi: &Expr,
    mesh: &SphereMesh,
    r: &[f64],
    coloring: &Coloring,
    cfg: &RadialSolveConfig,
) -> Result<Vec<Triplet<usize, usize, f64>>> {
    let mut triplets = Vec::new();
    for group in &coloring.groups {
        let mut plus = r.to_vec();
        let mut minus = r.to_vec();
        let mut steps = vec![0.0; r.len()];
        for &c in group {
            steps[c] = cfg.fd_step * r[c].abs().max(1.0);
            plus[c] += steps[c];
            minus[c] -= steps[c];
        }
        let rp = radial_residual(warp, psi, mesh, &plus, cfg.exec)?;
        let rm = radial_residual(warp, psi, mesh, &minus, cfg.exec)?;
        for &c in group {
            for &p in &coloring.rows_of[c] {
                triplets.push(Triplet::new(p, c, (rp[p] - rm[p]) / (2.0 * steps[c])));
            }
        }
    }
    Ok(triplets)
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn radial_solve(warp: &WarpModel, psi: &Expr, r1: f64, r2: f64, cfg: &RadialSolveConfig) -> Result<RadialSolution> {
    radial_solve_report(warp, psi, r1, r2, cfg, None)?.into_result()
}

/// Damped Newton for `σ₁(η[Σ]) = Ψ(r)` with `(n,k,l) = (2,1,0)`, after the
/// barrier conditions are confirmed. A failed solve is returned with
/// `converged = false`.
pub fn radial_solve_report(
    warp: &WarpModel,
    psi: &Expr,
    r1: f64,
    r2: f64,
    cfg: &RadialSolveConfig,
    start: Option<RadialGraph>,
) -> Result<RadialSolution> {
    let op = QuotientOp::new(2, 1, 0)?;
    let barrier = barrier_check(warp, psi, r1, r2, op)?;
    if !barrier.passed() {
        let bad: Vec<&str> = barrier
            .conditions
            .iter()
            .filter(|c| c.status != ConditionStatus::Holds)
            .map(|c| c.name)
            .collect();
        return Err(Error::Barrier(format!("conditions not satisfied: {}", bad.join(", "))));
    }
    let start = match start {
        Some(g) => g,
        None => {
            let mesh = SphereMesh::new(cfg.n_lat, cfg.n_lon)?;
            RadialGraph::constant(warp.clone(), mesh, cfg.initial.unwrap_or(0.5 * (r1 + r2)))?
        }
    };
    let mut sol = radial_newton(warp, psi, r1, r2, cfg, start)?;
    sol.barrier = Some(barrier);
    Ok(sol)
}

/// The Newton iteration alone, without the barrier check. `[r1, r2]` only
/// sets the band whose exit is flagged.
pub fn radial_newton(
    warp: &WarpModel,
    psi: &Expr,
    r1: f64,
    r2: f64,
    cfg: &RadialSolveConfig,
    start: RadialGraph,
) -> Result<RadialSolution> {
    check_psi(psi)?;
    let mut graph = start;
    let mesh = graph.mesh;
    let coloring = Coloring::new(&mesh);
    let band = |r: &[f64]| r.iter().all(|v| *v >= r1 && *v <= r2);
    let mut left_band = !band(&graph.r);
    let mut res = radial_residual(warp, psi, &mesh, &graph.r, cfg.exec)?;
    let mut history = Vec::new();
    let mut step = 0.0;
    let mut failure = None;
    let mut converged = false;
    for iter in 0..=cfg.max_iter {
        let (r_min, r_max) = graph.r.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        history.push(RadialIter { iter, residual_sup: sup(&res), step, r_min, r_max });
        if sup(&res) < cfg.tol {
            converged = true;
            break;
        }
        if iter == cfg.max_iter {
            failure = Some(format!("iteration limit {} reached", cfg.max_iter));
            break;
        }
        let triplets = radial_jacobian(warp, psi, &mesh, &graph.r, &coloring, cfg)?;
        let neg: Vec<f64> = res.iter().map(|v| -v).collect();
        let delta = sparse_solve(mesh.len(), &triplets, &neg)?;
        let merit = l2(&res);
        let mut alpha = 1.0;
        let accepted = loop {
            let trial: Vec<f64> = graph.r.iter().zip(&delta).map(|(r, d)| r + alpha * d).collect();
            if trial.iter().all(|v| warp.contains(*v) && *v > 0.0) {
                if let Ok(tr) = radial_residual(warp, psi, &mesh, &trial, cfg.exec) {
                    if l2(&tr) < merit {
                        break Some((trial, tr));
                    }
                }
            }
            alpha *= cfg.backtrack;
            if alpha < cfg.min_step {
                break None;
            }
        };
        match accepted {
            Some((trial, tr)) => {
                graph.r = trial;
                res = tr;
                step = alpha;
                left_band |= !band(&graph.r);
            }
            None => {
                failure = Some("line search found no decreasing admissible step".into());
                break;
            }
        }
    }
    Ok(RadialSolution { graph, history, converged, left_band, failure, barrier: None })
}

// ---------------------------------------------------------------------------
// Finite-difference identity residuals

/// Structured node set on which derived tensor fields are differenced.
trait Lattice: Sync {
    fn len(&self) -> usize;
    fn spacing(&self, axis: usize) -> f64;
    fn dim(&self) -> usize;
    /// Neighbour along `axis`; `None` off the lattice. Tensor components
    /// change meaning across a pole, so the sphere mesh does not wrap here.
    fn shift(&self, p: usize, axis: usize, forward: bool) -> Option<usize>;
}

impl Lattice for SphereMesh {
    fn len(&self) -> usize {
        SphereMesh::len(self)
    }

    fn spacing(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.d_theta()
        } else {
            self.d_phi()
        }
    }

    fn dim(&self) -> usize {
        2
    }

    fn shift(&self, p: usize, axis: usize, forward: bool) -> Option<usize> {
        let (i, j) = (p / self.n_lon, p % self.n_lon);
        if axis == 0 {
            let i = if forward { i + 1 } else { i.checked_sub(1)? };
            (i < self.n_lat).then_some(i * self.n_lon + j)
        } else {
            let j = if forward { (j + 1) % self.n_lon } else { (j + self.n_lon - 1) % self.n_lon };
            Some(i * self.n_lon + j)
        }
    }
}

impl Lattice for Grid {
    fn len(&self) -> usize {
        Grid::len(self)
    }

    fn spacing(&self, _axis: usize) -> f64 {
        self.h
    }

    fn dim(&self) -> usize {
        Grid::dim(self)
    }

    fn shift(&self, p: usize, axis: usize, forward: bool) -> Option<usize> {
        let i = self.multi_index(p)[axis];
        let s = self.stride(axis);
        if forward {
            (i + 1 < self.dims[axis]).then_some(p + s)
        } else {
            (i > 0).then(|| p - s)
        }
    }
}

type Field = Vec<Option<Vec<f64>>>;

/// Central differences of every component; `out[p][axis][c]`.
fn diff(lat: &impl Lattice, f: &Field) -> Vec<Option<Vec<Vec<f64>>>> {
    map_range(Exec::default(), lat.len(), |p| {
        f[p].as_ref()?;
        (0..lat.dim())
            .map(|axis| {
                let a = f[lat.shift(p, axis, true)?].as_ref()?;
                let b = f[lat.shift(p, axis, false)?].as_ref()?;
                let h2 = 2.0 * lat.spacing(axis);
                Some(a.iter().zip(b).map(|(x, y)| (x - y) / h2).collect())
            })
            .collect()
    })
}

fn mat(n: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, v)
}

/// `Γ^m_ij` stored at `(m·n + i)·n + j`.
fn christoffel(n: usize, ginv: &DMatrix<f64>, dg: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; n * n * n];
    for m in 0..n {
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += ginv[(m, k)] * (dg[i][k * n + j] + dg[j][k * n + i] - dg[k][i * n + j]);
                }
                out[(m * n + i) * n + j] = 0.5 * s;
            }
        }
    }
    out
}

/// Covariant derivative of a tensor with `rank` lower indices. `t` holds the
/// components and `dt[l]` their partial derivatives along axis `l`. The new
/// index comes last.
fn covariant(n: usize, rank: usize, t: &[f64], dt: &[Vec<f64>], gam: &[f64]) -> Vec<f64> {
    let size = n.pow(rank as u32);
    let mut out = vec![0.0; size * n];
    for idx in 0..size {
        let mut digits = vec![0; rank];
        let mut rest = idx;
        for d in (0..rank).rev() {
            digits[d] = rest % n;
            rest /= n;
        }
        for l in 0..n {
            let mut v = dt[l][idx];
            for slot in 0..rank {
                let stride = n.pow((rank - 1 - slot) as u32);
                let base = idx - digits[slot] * stride;
                for m in 0..n {
                    v -= gam[(m * n + l) * n + digits[slot]] * t[base + m * stride];
                }
            }
            out[idx * n + l] = v;
        }
    }
    out
}

/// Components of a lower-index tensor in the frame `e` (columns).
fn in_frame(n: usize, rank: usize, t: &[f64], e: &DMatrix<f64>) -> Vec<f64> {
    let mut cur = t.to_vec();
    for slot in 0..rank {
        let stride = n.pow((rank - 1 - slot) as u32);
        let mut next = vec![0.0; cur.len()];
        for (idx, out) in next.iter_mut().enumerate() {
            let a = (idx / stride) % n;
            let base = idx - a * stride;
            *out = (0..n).map(|i| cur[base + i * stride] * e[(i, a)]).sum();
        }
        cur = next;
    }
    cur
}

fn frame_sup(n: usize, rank: usize, t: &[f64], e: &DMatrix<f64>) -> f64 {
    sup(&in_frame(n, rank, t, e))
}

/// Sup-norm residuals of the identities at one mesh level.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityReport {
    pub h: f64,
    pub nodes: usize,
    /// `(identity, sup residual)`; `None` when the identity was skipped.
    pub residuals: Vec<(String, Option<f64>)>,
    pub skipped: Vec<String>,
}

impl IdentityReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.residuals.iter().find(|(n, _)| n == name).and_then(|(_, v)| *v)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("identity,h,nodes,residual\n");
        for (name, v) in &self.residuals {
            let v = v.map_or("skipped".to_string(), |v| format!("{v:?}"));
            let _ = writeln!(out, "{name},{:?},{},{v}", self.h, self.nodes);
        }
        out
    }
}

/// The same identities on a sequence of meshes with shrinking spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct LadderReport {
    pub levels: Vec<IdentityReport>,
}

impl LadderReport {
    pub fn series(&self, name: &str) -> Vec<f64> {
        self.levels.iter().filter_map(|l| l.get(name)).collect()
    }

    /// Observed orders `log(e_i/e_{i+1}) / log(h_i/h_{i+1})`.
    pub fn orders(&self, name: &str) -> Vec<f64> {
        let e = self.series(name);
        self.levels
            .windows(2)
            .zip(e.windows(2))
            .map(|(l, e)| (e[0] / e[1]).ln() / (l[0].h / l[1].h).ln())
            .collect()
    }

    /// Smallest ratio between consecutive residuals.
    pub fn min_ratio(&self, name: &str) -> f64 {
        self.series(name).windows(2).map(|w| w[0] / w[1]).fold(f64::INFINITY, f64::min)
    }

    pub fn names(&self) -> Vec<String> {
        self.levels.first().map_or(Vec::new(), |l| l.residuals.iter().map(|(n, _)| n.clone()).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("identity,level,h,residual,order\n");
        for name in self.names() {
            let orders = self.orders(&name);
            for (i, level) in self.levels.iter().enumerate() {
                let v = level.get(&name).map_or("skipped".to_string(), |v| format!("{v:?}"));
                let o = if i == 0 { "".to_string() } else { orders.get(i - 1).map_or(String::new(), |o| format!("{o:?}")) };
                let _ = writeln!(out, "{name},{i},{:?},{v},{o}", level.h);
            }
        }
        out
    }
}

pub const GRAD_PHI: &str = "grad_big_phi";
pub const GRAD_TAU: &str = "grad_tau";
pub const HESS_TAU: &str = "hess_tau";
pub const HESS_PHI: &str = "hess_big_phi";
pub const CODAZZI: &str = "codazzi";
pub const COMMUTATOR: &str = "commutator";
pub const SUW: &str = "normal_component";

/// Finite-difference residuals of the four support-function identities on
/// the band `π/4 ≤ θ ≤ 3π/4`, measured in the induced metric.
pub fn verify_support_identities(graph: &RadialGraph) -> Result<IdentityReport> {
    let mesh = graph.mesh;
    let m = mesh.len();
    let n = 2;
    struct Base {
        g: Vec<f64>,
        h: Vec<f64>,
        tau: Vec<f64>,
        big_phi: Vec<f64>,
        grad_r: [f64; 2],
        w: WarpValues,
    }
    let base: Vec<Base> = map_range(Exec::default(), m, |p| {
        let d = jet(&mesh, &graph.r, p);
        let w = graph.warp.eval(d.r)?;
        let (g, h, v) = radial_forms(w, mesh.colatitude(p), &d);
        Ok(Base {
            g: g.transpose().as_slice().to_vec(),
            h: h.transpose().as_slice().to_vec(),
            tau: vec![w.phi * w.phi / v],
            big_phi: vec![graph.warp.big_phi(d.r)?],
            grad_r: [d.rt, d.rp],
            w,
        })
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let field = |f: &dyn Fn(&Base) -> Vec<f64>| -> Field { base.iter().map(|b| Some(f(b))).collect() };
    let d_phi = diff(&mesh, &field(&|b| b.big_phi.clone()));
    let d_tau = diff(&mesh, &field(&|b| b.tau.clone()));
    let d_g = diff(&mesh, &field(&|b| b.g.clone()));
    let d_h = diff(&mesh, &field(&|b| b.h.clone()));
    let flat = |d: &Option<Vec<Vec<f64>>>| d.as_ref().map(|v| v.iter().map(|a| a[0]).collect::<Vec<f64>>());
    let grad_phi: Field = d_phi.iter().map(flat).collect();
    let grad_tau: Field = d_tau.iter().map(flat).collect();
    let dd_phi = diff(&mesh, &grad_phi);
    let dd_tau = diff(&mesh, &grad_tau);

    let space_form = graph.warp.curvature().is_some();
    let band: Vec<usize> = (0..m)
        .filter(|&p| {
            let t = mesh.colatitude(p);
            (PI / 4.0..=3.0 * PI / 4.0).contains(&t)
        })
        .collect();
    if band.is_empty() {
        return Err(Error::Stencil("sphere mesh has no rows in the verification band".into()));
    }
    let per_node = map_range(Exec::default(), band.len(), |a| -> Result<[f64; 4]> {
        let p = band[a];
        let b = &base[p];
        let missing = || Error::Stencil("sphere mesh too coarse for nested differences".into());
        let (dg, dh) = (d_g[p].as_ref().ok_or_else(missing)?, d_h[p].as_ref().ok_or_else(missing)?);
        let (gp, gt) = (grad_phi[p].as_ref().ok_or_else(missing)?, grad_tau[p].as_ref().ok_or_else(missing)?);
        let (ddp, ddt) = (dd_phi[p].as_ref().ok_or_else(missing)?, dd_tau[p].as_ref().ok_or_else(missing)?);
        let g = mat(n, &b.g);
        let h = mat(n, &b.h);
        let ginv = g.clone().try_inverse().ok_or_else(|| Error::Domain("singular metric".into()))?;
        let gam = christoffel(n, &ginv, dg);
        let (_, e) = principal_curvatures(&g, &h)?;
        let tau = b.tau[0];

        let r1: Vec<f64> = (0..n).map(|i| gp[i] - b.w.phi * b.grad_r[i]).collect();
        let hg = &h * &ginv;
        let r2: Vec<f64> = (0..n).map(|i| gt[i] - (0..n).map(|k| hg[(i, k)] * gp[k]).sum::<f64>()).collect();

        let hess = |dd: &Vec<Vec<f64>>, d1: &Vec<f64>| -> Vec<f64> {
            let mut out = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let second = 0.5 * (dd[j][i] + dd[i][j]);
                    let conn: f64 = (0..n).map(|k| gam[(k * n + i) * n + j] * d1[k]).sum();
                    out[i * n + j] = second - conn;
                }
            }
            out
        };
        let hess_tau = hess(ddt, gt);
        let hess_phi = hess(ddp, gp);
        let nabla_h = covariant(n, 2, &b.h, dh, &gam);
        let grad_phi_up: Vec<f64> = (0..n).map(|k| (0..n).map(|l| ginv[(k, l)] * gp[l]).sum()).collect();
        let hgh = &hg * &h;
        let mut r3 = vec![0.0; n * n];
        let mut r4 = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let third: f64 = (0..n).map(|k| nabla_h[(i * n + j) * n + k] * grad_phi_up[k]).sum();
                let rhs3 = third + b.w.dphi * h[(i, j)] - tau * hgh[(i, j)];
                r3[i * n + j] = hess_tau[i * n + j] - rhs3;
                r4[i * n + j] = hess_phi[i * n + j] - (b.w.dphi * g[(i, j)] - tau * h[(i, j)]);
            }
        }
        Ok([frame_sup(n, 1, &r1, &e), frame_sup(n, 1, &r2, &e), frame_sup(n, 2, &r3, &e), frame_sup(n, 2, &r4, &e)])
    });
    let mut worst = [0.0f64; 4];
    for v in per_node {
        let v = v?;
        for i in 0..4 {
            worst[i] = worst[i].max(v[i]);
        }
    }
    let mut skipped = Vec::new();
    if !space_form {
        skipped.push(format!("{HESS_TAU}: ambient curvature closed form only for space forms"));
    }
    Ok(IdentityReport {
        h: mesh.d_theta(),
        nodes: band.len(),
        residuals: vec![
            (GRAD_PHI.into(), Some(worst[0])),
            (GRAD_TAU.into(), Some(worst[1])),
            (HESS_TAU.into(), space_form.then_some(worst[2])),
            (HESS_PHI.into(), Some(worst[3])),
        ],
        skipped,
    })
}

/// Support identities on a sequence of meshes for the radial graph `f(z)`.
pub fn support_ladder(warp: &WarpModel, meshes: &[SphereMesh], f: impl Fn([f64; 3]) -> f64) -> Result<LadderReport> {
    let levels = meshes
        .iter()
        .map(|&mesh| verify_support_identities(&RadialGraph::from_fn(warp.clone(), mesh, &f)?))
        .collect::<Result<_>>()?;
    Ok(LadderReport { levels })
}

/// Nested-difference data of a Euclidean graph at one node.
struct GraphNode {
    g: DMatrix<f64>,
    kappa: Vec<f64>,
    frame: DMatrix<f64>,
    nabla_h: Vec<f64>,
    nabla2_h: Vec<f64>,
    hess_nu: Vec<f64>,
    nu: f64,
    du: Vec<f64>,
    df: Vec<f64>,
}

/// Nodes within half the domain radius of its centre, with their nested
/// derivatives. `f_of` maps the principal curvatures to the manufactured
/// right-hand side.
fn graph_pipeline(u: &GridField, f_of: &(dyn Fn(&[f64]) -> Result<f64> + Sync)) -> Result<Vec<GraphNode>> {
    let grid = &u.grid;
    let n = grid.dim();
    struct Base {
        g: Vec<f64>,
        h: Vec<f64>,
        nu: Vec<f64>,
        f: Vec<f64>,
        du: Vec<f64>,
    }
    let base: Vec<Option<Base>> = map_range(Exec::default(), grid.len(), |p| -> Result<Option<Base>> {
        if grid.kind(p) != NodeKind::Interior {
            return Ok(None);
        }
        let d = discretize_at(u, p)?;
        let w = (1.0 + d.du.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let g = DMatrix::from_fn(n, n, |i, j| d.du[i] * d.du[j] + if i == j { 1.0 } else { 0.0 });
        let h = &d.d2u / w;
        let (kappa, _) = principal_curvatures(&g, &h)?;
        Ok(Some(Base {
            g: g.transpose().as_slice().to_vec(),
            h: h.transpose().as_slice().to_vec(),
            nu: vec![1.0 / w],
            f: vec![f_of(&kappa)?],
            du: d.du,
        }))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let field = |f: &dyn Fn(&Base) -> Vec<f64>| -> Field { base.iter().map(|b| b.as_ref().map(f)).collect() };
    let d_g = diff(grid, &field(&|b| b.g.clone()));
    let d_h = diff(grid, &field(&|b| b.h.clone()));
    let d_nu = diff(grid, &field(&|b| b.nu.clone()));
    let d_f = diff(grid, &field(&|b| b.f.clone()));

    // level 1: Christoffel symbols, ∇h, ∂ν
    let level1: Vec<Option<(Vec<f64>, Vec<f64>, Vec<f64>)>> = map_range(Exec::default(), grid.len(), |p| {
        let b = base[p].as_ref()?;
        let (dg, dh, dnu) = (d_g[p].as_ref()?, d_h[p].as_ref()?, d_nu[p].as_ref()?);
        let ginv = mat(n, &b.g).try_inverse()?;
        let gam = christoffel(n, &ginv, dg);
        let nabla_h = covariant(n, 2, &b.h, dh, &gam);
        Some((gam, nabla_h, dnu.iter().map(|v| v[0]).collect()))
    });
    let d_nabla_h = diff(grid, &level1.iter().map(|l| l.as_ref().map(|l| l.1.clone())).collect());
    let dd_nu = diff(grid, &level1.iter().map(|l| l.as_ref().map(|l| l.2.clone())).collect());

    let center = grid.domain.center();
    let radius = grid.domain.radius();
    let check: Vec<usize> = (0..grid.len())
        .filter(|&p| {
            let x = grid.coords(p);
            x.iter().zip(&center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt() <= 0.5 * radius + 1e-12
        })
        .collect();
    if check.is_empty() {
        return Err(Error::Stencil("no nodes in the inner half of the domain".into()));
    }
    map_range(Exec::default(), check.len(), |a| -> Result<GraphNode> {
        let p = check[a];
        let missing = || Error::Stencil("grid too coarse for nested differences on the inner half".into());
        let b = base[p].as_ref().ok_or_else(missing)?;
        let (gam, nabla_h, dnu) = level1[p].as_ref().ok_or_else(missing)?;
        let dnh = d_nabla_h[p].as_ref().ok_or_else(missing)?;
        let ddn = dd_nu[p].as_ref().ok_or_else(missing)?;
        let df = d_f[p].as_ref().ok_or_else(missing)?;
        let nabla2_h = covariant(n, 3, nabla_h, dnh, gam);
        let mut hess_nu = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let conn: f64 = (0..n).map(|k| gam[(k * n + i) * n + j] * dnu[k]).sum();
                hess_nu[i * n + j] = 0.5 * (ddn[j][i] + ddn[i][j]) - conn;
            }
        }
        let g = mat(n, &b.g);
        let (kappa, frame) = principal_curvatures(&g, &mat(n, &b.h))?;
        Ok(GraphNode {
            g,
            kappa,
            frame,
            nabla_h: nabla_h.clone(),
            nabla2_h,
            hess_nu,
            nu: b.nu[0],
            du: b.du.clone(),
            df: df.iter().map(|v| v[0]).collect(),
        })
    })
    .into_iter()
    .collect()
}

/// Codazzi symmetry `h_ijk = h_ikj` and the commutator
/// `h_ii11 − h_11ii − h_11 h_ii² + h_11² h_ii = 0` on the inner half of the
/// domain, in a principal frame.
pub fn verify_commutator(u: &GridField) -> Result<IdentityReport> {
    let n = u.grid.dim();
    let nodes = graph_pipeline(u, &|_| Ok(0.0))?;
    let mut codazzi = 0.0f64;
    let mut comm = 0.0f64;
    for node in &nodes {
        let a = in_frame(n, 3, &node.nabla_h, &node.frame);
        let t = in_frame(n, 4, &node.nabla2_h, &node.frame);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    codazzi = codazzi.max((a[(i * n + j) * n + k] - a[(i * n + k) * n + j]).abs());
                }
                let (ki, kj) = (node.kappa[i], node.kappa[j]);
                let iijj = t[((i * n + i) * n + j) * n + j];
                let jjii = t[((j * n + j) * n + i) * n + i];
                comm = comm.max((iijj - jjii - kj * ki * ki + kj * kj * ki).abs());
            }
        }
    }
    Ok(IdentityReport {
        h: u.h(),
        nodes: nodes.len(),
        residuals: vec![(CODAZZI.into(), Some(codazzi)), (COMMUTATOR.into(), Some(comm))],
        skipped: Vec::new(),
    })
}

pub fn verify_suw_identity(u: &GridField, op: QuotientOp) -> Result<IdentityReport> {
    verify_suw_identity_eps(u, op, 0.0)
}

/// Residual of `F^{ij}∇_ij ν^{n+1} + F^{ij}h_ik h_jk ν^{n+1} = −⟨∇f, E_{n+1}⟩`
/// for `F = σ_k/σ_l(κ + ε)` and the `f` it manufactures from the graph.
pub fn verify_suw_identity_eps(u: &GridField, op: QuotientOp, eps: f64) -> Result<IdentityReport> {
    let n = u.grid.dim();
    op.check_len(n)?;
    let shifted = |kappa: &[f64]| -> Result<Vec<f64>> {
        let k: Vec<f64> = kappa.iter().map(|v| v + eps).collect();
        let cone = cone_of_slice(op.k, &k, 0.0);
        if let Some((index, value)) = cone.first_failure(0.0) {
            return Err(Error::Admissibility { index, value });
        }
        Ok(k)
    };
    let nodes = graph_pipeline(u, &|kappa| Ok(quotient_unchecked(op, &shifted(kappa)?)))?;
    let mut worst = 0.0f64;
    for node in &nodes {
        let k = shifted(&node.kappa)?;
        let fk = quotient_gradient(op, &k);
        let hn = in_frame(n, 2, &node.hess_nu, &node.frame);
        let lhs: f64 = (0..n).map(|a| fk[a] * (hn[a * n + a] + node.kappa[a] * node.kappa[a] * node.nu)).sum();
        let ginv = node.g.clone().try_inverse().ok_or_else(|| Error::Domain("singular metric".into()))?;
        let mut rhs = 0.0;
        for i in 0..n {
            for j in 0..n {
                rhs -= ginv[(i, j)] * node.df[j] * node.du[i];
            }
        }
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(IdentityReport { h: u.h(), nodes: nodes.len(), residuals: vec![(SUW.into(), Some(worst))], skipped: Vec::new() })
}

fn graph_levels(domain: &Domain, points: &[usize], f: &dyn Fn(&[f64]) -> f64) -> Result<Vec<GridField>> {
    points
        .iter()
        .map(|&pts| Ok(GridField::from_fn(Grid::new(domain.clone(), pts)?, f)))
        .collect()
}

pub fn commutator_ladder(domain: &Domain, points: &[usize], f: impl Fn(&[f64]) -> f64) -> Result<LadderReport> {
    let levels = graph_levels(domain, points, &f)?.iter().map(verify_commutator).collect::<Result<_>>()?;
    Ok(LadderReport { levels })
}

pub fn suw_ladder(
    domain: &Domain,
    points: &[usize],
    f: impl Fn(&[f64]) -> f64,
    op: QuotientOp,
    eps: f64,
) -> Result<LadderReport> {
    let levels = graph_levels(domain, points, &f)?
        .iter()
        .map(|u| verify_suw_identity_eps(u, op, eps))
        .collect::<Result<_>>()?;
    Ok(LadderReport { levels })
}
