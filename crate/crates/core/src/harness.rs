//! Randomized sweeps over the Gårding cones: sampling, finite-difference
//! oracles and machine-checkable margin reports for the cone inequalities.
//!
//! Every sample owns a ChaCha stream derived from `(seed, configuration,
//! index)`, and reductions run in index order, so a report is a pure function
//! of its spec regardless of thread count.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etacalc::{concavity_gap_with, key_lemma_from_lambda, quotient_gradient, quotient_hessian};
use crate::par::{map_range, Exec};
use crate::symcone::{
    binomial, cone_of_slice, maclaurin_unchecked, reverse_unchecked, sigma_all, sigma_of,
    sigma_skip, QuotientOp, Spectrum,
};

const NONE: usize = usize::MAX;

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED_u64, |acc, &p| mix(acc ^ mix(p)))
}

fn stream(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

/// Width of the shift `ξ` used by [`sample_gamma_k`].
///
/// Starts narrow and widens until a pilot batch rejects between 20% and 80%
/// of draws; narrows again if it overshoots.
pub fn adapt_spread(n: usize, k: usize, seed: u64) -> f64 {
    const PILOT: usize = 2000;
    let mut s = 0.25;
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    for round in 0..60u64 {
        let mut rng = stream(&[seed, n as u64, k as u64, 0xB11E, round]);
        let mut lam = vec![0.0; n];
        let rejected = (0..PILOT)
            .filter(|_| {
                draw(&mut rng, s, &mut lam);
                !cone_of_slice(k, &lam, 0.0).inside
            })
            .count();
        let rate = rejected as f64 / PILOT as f64;
        if (0.2..=0.8).contains(&rate) {
            return s;
        }
        if rate < 0.2 {
            lo = s;
        } else {
            hi = s;
        }
        s = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * s };
    }
    s
}

fn draw(rng: &mut ChaCha8Rng, s: f64, out: &mut [f64]) {
    let c = rng.random_range(0.1..2.0);
    for v in out.iter_mut() {
        *v = c + rng.random_range(-s..s);
    }
}

/// An admissible draw, sorted ascending.
fn draw_admissible(n: usize, k: usize, s: f64, parts: &[u64]) -> Vec<f64> {
    let mut rng = stream(parts);
    let mut lam = vec![0.0; n];
    loop {
        draw(&mut rng, s, &mut lam);
        if cone_of_slice(k, &lam, 0.0).inside {
            lam.sort_by(f64::total_cmp);
            return lam;
        }
    }
}

/// `count` samples of the open cone `Γ_k ⊂ ℝⁿ` from the shifted-uniform
/// scheme `λ = c·1 + ξ`.
pub fn sample_gamma_k(n: usize, k: usize, seed: u64, count: usize) -> Result<Vec<Spectrum>> {
    sample_gamma_k_with(n, k, seed, count, Exec::default())
}

pub fn sample_gamma_k_with(
    n: usize,
    k: usize,
    seed: u64,
    count: usize,
    exec: Exec,
) -> Result<Vec<Spectrum>> {
    if n < 2 || k == 0 || k > n {
        return Err(Error::IndexDomain(format!("need 1 <= k <= n, n >= 2; got n={n} k={k}")));
    }
    let s = adapt_spread(n, k, seed);
    map_range(exec, count, |i| {
        Spectrum::new(draw_admissible(n, k, s, &[seed, n as u64, k as u64, i as u64]))
    })
    .into_iter()
    .collect()
}

/// Central-difference gradient with one Richardson extrapolation.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], step: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    let mut d = |i: usize, h: f64| {
        y[i] = x[i] + h;
        let fp = f(&y);
        y[i] = x[i] - h;
        let fm = f(&y);
        y[i] = x[i];
        (fp - fm) / (2.0 * h)
    };
    (0..x.len())
        .map(|i| {
            let coarse = d(i, step);
            let fine = d(i, 0.5 * step);
            (4.0 * fine - coarse) / 3.0
        })
        .collect()
}

/// Central-difference Hessian with one Richardson extrapolation, returned
/// row-major.
pub fn fd_hessian<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], step: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut y = x.to_vec();
    let f0 = f(x);
    let mut d = |i: usize, j: usize, h: f64| {
        if i == j {
            y[i] = x[i] + h;
            let fp = f(&y);
            y[i] = x[i] - h;
            let fm = f(&y);
            y[i] = x[i];
            return (fp - 2.0 * f0 + fm) / (h * h);
        }
        let mut at = |si: f64, sj: f64| {
            y[i] = x[i] + si * h;
            y[j] = x[j] + sj * h;
            let v = f(&y);
            y[i] = x[i];
            y[j] = x[j];
            v
        };
        (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * h * h)
    };
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let coarse = d(i, j, step);
            let fine = d(i, j, 0.5 * step);
            let v = (4.0 * fine - coarse) / 3.0;
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub theta: f64,
    pub mu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub configs: Vec<SweepConfig>,
    pub samples: usize,
    pub seed: u64,
    /// Lower bound on the inequality margins.
    pub tolerance: f64,
    /// Lower bound on the concavity gaps.
    pub concavity_tolerance: f64,
    /// Relative tolerance for the polynomial identities.
    pub identity_tolerance: f64,
    /// Relative tolerance for closed-form gradients against finite differences.
    pub gradient_tolerance: f64,
    /// Random unit directions per sample for the concavity gap.
    pub directions: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            configs: Self::standard_configs(),
            samples: 100_000,
            seed: 0,
            tolerance: -1e-10,
            concavity_tolerance: -1e-9,
            identity_tolerance: 1e-12,
            gradient_tolerance: 1e-6,
            directions: 100,
        }
    }
}

impl SweepSpec {
    /// `n ∈ {3,4,5}`, every `0 ≤ l < k < n`, `θ = 1`, `μ ∈ {1, 0.5, 0}`.
    pub fn standard_configs() -> Vec<SweepConfig> {
        let mut out = Vec::new();
        for n in 3..=5 {
            for k in 1..n {
                for l in 0..k {
                    for mu in [1.0, 0.5, 0.0] {
                        out.push(SweepConfig {
                            n,
                            k,
                            l,
                            theta: 1.0,
                            mu,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Input(format!("sweep spec: {e}")))
    }

    fn validate(&self) -> Result<()> {
        for c in &self.configs {
            QuotientOp::new(c.n, c.k, c.l)?;
            if !(c.theta > 0.0 && c.theta >= c.mu) {
                return Err(Error::Domain(format!(
                    "need theta >= mu and theta > 0, got theta={} mu={}",
                    c.theta, c.mu
                )));
            }
        }
        Ok(())
    }
}

/// Inequalities tracked per sample. Each has a margin that must stay at or
/// above a threshold (or strictly above zero for the positivity checks).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Inequality {
    /// The three expansion identities of `σ_k` in a single entry, as minus
    /// the largest relative error.
    Identities,
    /// Generalized Newton–Maclaurin, worst over admissible `(r, s)`.
    Maclaurin,
    /// `l(n−k+1)σ_{k−1}σ_l − k(n−l+1)σ_kσ_{l−1}`, relative to its terms.
    MaclaurinSpecial,
    /// `min(λ_{n−k+1}, σ_{k−1}(λ|n−k+1))`, strictly positive.
    ReversePositivity,
    /// Empirical infimum of `σ_{k−1}(λ|n−k+1)/σ_{k−1}(λ)`.
    ReverseRatio,
    /// Worst concavity gap over the random directions.
    Concavity,
    /// `min F^{ii}/ΣF^{jj}`, strictly positive when `k < n`.
    KeyLemma,
    /// Second smallest `F^{ii}/ΣF^{jj}`.
    KeyLemmaSecond,
    /// Minus the relative deviation of `G` from finite differences.
    GradientOracle,
}

impl Inequality {
    pub const ALL: [Inequality; 9] = [
        Inequality::Identities,
        Inequality::Maclaurin,
        Inequality::MaclaurinSpecial,
        Inequality::ReversePositivity,
        Inequality::ReverseRatio,
        Inequality::Concavity,
        Inequality::KeyLemma,
        Inequality::KeyLemmaSecond,
        Inequality::GradientOracle,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Inequality::Identities => "sigma_identities",
            Inequality::Maclaurin => "newton_maclaurin",
            Inequality::MaclaurinSpecial => "newton_maclaurin_special",
            Inequality::ReversePositivity => "reverse_positivity",
            Inequality::ReverseRatio => "reverse_ratio (empirical infimum)",
            Inequality::Concavity => "concavity_gap",
            Inequality::KeyLemma => "key_lemma_ratio (empirical infimum)",
            Inequality::KeyLemmaSecond => "key_lemma_second_ratio (empirical infimum)",
            Inequality::GradientOracle => "gradient_fd_oracle",
        }
    }

    /// Whether `margin` violates the inequality under `spec`. `None` marks
    /// rows that are recorded but not asserted.
    fn fails(self, margin: f64, cfg: &SweepConfig, spec: &SweepSpec) -> Option<bool> {
        let bad = match self {
            Inequality::Identities => !(margin >= -spec.identity_tolerance),
            Inequality::Maclaurin | Inequality::MaclaurinSpecial => !(margin >= spec.tolerance),
            Inequality::ReversePositivity => !(margin > 0.0),
            Inequality::Concavity => !(margin >= spec.concavity_tolerance),
            Inequality::KeyLemma if cfg.k < cfg.n => !(margin > 0.0),
            Inequality::GradientOracle => !(margin >= -spec.gradient_tolerance),
            _ => return None,
        };
        Some(bad)
    }
}

fn sample_margins(cfg: &SweepConfig, lam: &[f64], directions: usize, dir_seed: &[u64]) -> [f64; 9] {
    let n = cfg.n;
    let op = QuotientOp {
        n,
        k: cfg.k,
        l: cfg.l,
    };
    let sig = sigma_all(lam);
    let abs: Vec<f64> = lam.iter().map(|v| v.abs()).collect();
    let sig_abs = sigma_all(&abs);

    let mut ident = 0.0f64;
    for j in 1..=n {
        let scale = sig_abs[j].max(f64::MIN_POSITIVE);
        let mut sum_lam = 0.0;
        let mut sum_excl = 0.0;
        for i in 0..n {
            let e1 = sigma_skip(j - 1, lam, i, NONE);
            let e0 = sigma_skip(j, lam, i, NONE);
            ident = ident.max((lam[i] * e1 + e0 - sig[j]).abs() / scale);
            sum_lam += lam[i] * e1;
            sum_excl += e1;
        }
        ident = ident.max((sum_lam - j as f64 * sig[j]).abs() / scale);
        let scale1 = sig_abs[j - 1].max(f64::MIN_POSITIVE);
        ident = ident.max((sum_excl - (n - j + 1) as f64 * sig[j - 1]).abs() / scale1);
    }

    let mut mac = f64::INFINITY;
    for r in 1..=cfg.k {
        for s in 0..r.min(cfg.l + 1) {
            if (r, s) != (cfg.k, cfg.l) {
                mac = mac.min(maclaurin_unchecked(n, (cfg.k, cfg.l), (r, s), lam).margin);
            }
        }
    }
    if mac == f64::INFINITY {
        // (k, l) = (1, 0) admits only the trivial pair
        mac = 0.0;
    }
    let special = if cfg.l >= 1 {
        let m = maclaurin_unchecked(n, (cfg.k, cfg.l), (cfg.k, cfg.l), lam);
        let size = (cfg.l * (n - cfg.k + 1)) as f64 * sig[cfg.k - 1] * sig[cfg.l]
            + (cfg.k * (n - cfg.l + 1)) as f64 * sig[cfg.k] * sig[cfg.l - 1];
        m.special / size
    } else {
        // σ_{-1} = 0: the bound reduces to σ_{k-1}σ_0 ≥ 0 with l = 0 factor
        f64::INFINITY
    };

    let rev = reverse_unchecked(cfg.k, lam);

    let q = sig[cfg.k] / sig[cfg.l];
    let g = quotient_gradient(op, lam);
    let hess = quotient_hessian(op, lam);
    let mut rng = stream(dir_seed);
    let mut xi = vec![0.0; n];
    let mut conc = f64::INFINITY;
    for _ in 0..directions {
        let mut norm = 0.0f64;
        for v in xi.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
            norm += *v * *v;
        }
        let norm = norm.sqrt();
        xi.iter_mut().for_each(|v| *v /= norm);
        conc = conc.min(concavity_gap_with(op, q, &g, &hess, &xi));
    }

    let key = key_lemma_from_lambda(op, cfg.theta, cfg.mu, lam);

    let fd = fd_gradient(|x| sigma_of(op.k, x) / sigma_of(op.l, x), lam, 1e-5);
    let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let dev = g.iter().zip(&fd).fold(0.0f64, |a, (x, y)| a.max((x - y).abs())) / gmax;

    [
        -ident,
        mac,
        special,
        rev.position_value.min(rev.excluded_sigma),
        rev.ratio,
        conc,
        key.min_ratio,
        key.second_ratio,
        -dev,
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub config: SweepConfig,
    pub inequality: Inequality,
    pub min_margin: f64,
    pub mean_margin: f64,
    /// `None` for rows that are recorded but not asserted.
    pub failures: Option<usize>,
    pub count: usize,
    /// The sample attaining `min_margin`, for replay.
    pub argmin: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<ReportRow>,
}

impl SweepReport {
    pub fn total_failures(&self) -> usize {
        self.rows.iter().filter_map(|r| r.failures).sum()
    }

    pub fn is_clean(&self) -> bool {
        self.total_failures() == 0
    }

    pub fn row(&self, cfg: &SweepConfig, which: Inequality) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.config == *cfg && r.inequality == which)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "n,k,l,theta,mu,inequality,min_margin,mean_margin,failures,count,argmin_sample\n",
        );
        for r in &self.rows {
            let c = &r.config;
            let failures = r.failures.map_or("n/a".to_string(), |f| f.to_string());
            let argmin: Vec<String> = r.argmin.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(
                out,
                "{},{},{},{:?},{:?},{},{:?},{:?},{},{},{}",
                c.n,
                c.k,
                c.l,
                c.theta,
                c.mu,
                r.inequality.id(),
                r.min_margin,
                r.mean_margin,
                failures,
                r.count,
                argmin.join(";")
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

pub fn sweep(spec: &SweepSpec) -> Result<SweepReport> {
    sweep_with(spec, Exec::default())
}

pub fn sweep_with(spec: &SweepSpec, exec: Exec) -> Result<SweepReport> {
    spec.validate()?;
    let mut report = SweepReport::default();
    for (ci, cfg) in spec.configs.iter().enumerate() {
        let spread = adapt_spread(cfg.n, cfg.k, spec.seed);
        let per_sample = map_range(exec, spec.samples, |i| {
            let base = [spec.seed, ci as u64, i as u64];
            let lam = draw_admissible(cfg.n, cfg.k, spread, &base);
            let margins = sample_margins(cfg, &lam, spec.directions, &[spec.seed, ci as u64, i as u64, 0xD1]);
            (lam, margins)
        });
        for (slot, which) in Inequality::ALL.into_iter().enumerate() {
            if which == Inequality::MaclaurinSpecial && cfg.l == 0 {
                continue;
            }
            let mut min = f64::INFINITY;
            let mut arg = 0;
            let mut sum = 0.0;
            let mut failures = which.fails(0.0, cfg, spec).map(|_| 0usize);
            for (i, (_, m)) in per_sample.iter().enumerate() {
                let v = m[slot];
                if v < min || (i == 0) {
                    min = v;
                    arg = i;
                }
                sum += v;
                if which.fails(v, cfg, spec) == Some(true) {
                    *failures.as_mut().unwrap() += 1;
                }
            }
            report.rows.push(ReportRow {
                config: *cfg,
                inequality: which,
                min_margin: min,
                mean_margin: if per_sample.is_empty() { f64::NAN } else { sum / per_sample.len() as f64 },
                failures,
                count: per_sample.len(),
                argmin: per_sample.get(arg).map(|s| s.0.clone()).unwrap_or_default(),
            });
        }
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeRow {
    pub eps: f64,
    pub min_ratio: f64,
    pub second_ratio: f64,
}

/// Key-lemma ratios along `λ = (ε, 1, …, 1)`, the degeneration family for
/// `k = n`.
pub fn probe_kn(op: QuotientOp, theta: f64, mu: f64, eps: &[f64]) -> Result<Vec<ProbeRow>> {
    eps.iter()
        .map(|&e| {
            let mut lam = vec![1.0; op.n];
            lam[0] = e;
            crate::symcone::require_cone(op.k, &lam, 0.0)?;
            let r = key_lemma_from_lambda(op, theta, mu, &lam);
            Ok(ProbeRow {
                eps: e,
                min_ratio: r.min_ratio,
                second_ratio: r.second_ratio,
            })
        })
        .collect()
}

pub fn probe_csv(op: QuotientOp, rows: &[ProbeRow]) -> String {
    let mut out = String::from("n,k,l,eps,min_ratio,second_ratio\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:?},{:?},{:?}",
            op.n, op.k, op.l, r.eps, r.min_ratio, r.second_ratio
        );
    }
    out
}

/// `ε = 10^{-1}, …, 10^{-6}`.
pub fn default_probe_eps() -> Vec<f64> {
    (1..=6).map(|p| 10f64.powi(-p)).collect()
}

/// Normalized symmetric means `σ_j/C(n,j)`, handy for reporting.
pub fn normalized_sigmas(lam: &[f64]) -> Vec<f64> {
    let n = lam.len();
    sigma_all(lam)
        .into_iter()
        .enumerate()
        .map(|(j, s)| s / binomial(n, j))
        .collect()
}
