//! Elementary symmetric polynomials, Gårding cones and the classical
//! Newton–Maclaurin type inequalities.
//!
//! Every operation here works on a [`Spectrum`], whose values are stored in
//! ascending order. Indices passed to [`sigma_excl`] and [`check_reverse`]
//! refer to positions in that ascending order and are zero-based.

use crate::error::{Error, Result};

/// Eigenvalues sorted ascending, with the permutation back to the caller's order.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    values: Vec<f64>,
    /// `order[i]` is the caller's index of `values[i]`.
    order: Vec<usize>,
}

impl Spectrum {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::IndexDomain(format!(
                "spectrum needs at least 2 entries, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("spectrum entries must be finite".into()));
        }
        let mut order: Vec<usize> = (0..values.len()).collect();
        // stable sort keeps ties in caller order
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let sorted = order.iter().map(|&i| values[i]).collect();
        Ok(Self {
            values: sorted,
            order,
        })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, t: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|v| v * t).collect())
    }
}

/// The index triple selecting `σ_k / σ_l`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct QuotientOp {
    pub n: usize,
    pub k: usize,
    pub l: usize,
}

impl QuotientOp {
    pub fn new(n: usize, k: usize, l: usize) -> Result<Self> {
        if n < 2 || k > n || l >= k || k == 0 {
            return Err(Error::IndexDomain(format!(
                "need 0 <= l < k <= n with n >= 2, got (n,k,l)=({n},{k},{l})"
            )));
        }
        Ok(Self { n, k, l })
    }

    /// Same as [`QuotientOp::new`] but additionally rejects `k == n`.
    pub fn new_strict(n: usize, k: usize, l: usize) -> Result<Self> {
        let op = Self::new(n, k, l)?;
        if k == n {
            return Err(Error::IndexDomain(format!(
                "operation requires k < n, got k = n = {n}"
            )));
        }
        Ok(op)
    }

    pub fn degree(&self) -> usize {
        self.k - self.l
    }

    /// `C(n,k) / C(n,l)`: the quotient evaluated at the all-ones vector.
    pub fn unit_value(&self) -> f64 {
        binomial(self.n, self.k) / binomial(self.n, self.l)
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::IndexDomain(format!(
                "spectrum length {len} does not match n = {}",
                self.n
            )));
        }
        Ok(())
    }
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

const STACK_DEGREE: usize = 32;

/// `σ_k` of `values` with up to two positions skipped (`usize::MAX` = none).
///
/// Uses the recurrence `e_j <- e_j + x e_{j-1}` over the entries, which is the
/// coefficient recurrence of `Π (1 + x_i t)`.
pub(crate) fn sigma_skip(k: usize, values: &[f64], skip_a: usize, skip_b: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let mut stack = [0.0f64; STACK_DEGREE + 1];
    let mut heap;
    let e: &mut [f64] = if k <= STACK_DEGREE {
        &mut stack[..=k]
    } else {
        heap = vec![0.0; k + 1];
        &mut heap
    };
    e[0] = 1.0;
    let mut seen = 0usize;
    for (i, &x) in values.iter().enumerate() {
        if i == skip_a || i == skip_b {
            continue;
        }
        seen += 1;
        let top = seen.min(k);
        for j in (1..=top).rev() {
            e[j] += x * e[j - 1];
        }
    }
    if seen < k {
        0.0
    } else {
        e[k]
    }
}

/// All of `σ_0, …, σ_n` for a raw slice.
pub fn sigma_all(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut e = vec![0.0; n + 1];
    e[0] = 1.0;
    for (i, &x) in values.iter().enumerate() {
        for j in (1..=i + 1).rev() {
            e[j] += x * e[j - 1];
        }
    }
    e
}

/// `σ_k` of a raw slice; `k > len` gives 0.
pub fn sigma_of(k: usize, values: &[f64]) -> f64 {
    sigma_skip(k, values, usize::MAX, usize::MAX)
}

/// `σ_k(λ)` with `σ_0 = 1`.
pub fn sigma(k: usize, lam: &Spectrum) -> Result<f64> {
    if k > lam.len() {
        return Err(Error::IndexDomain(format!(
            "sigma index {k} exceeds n = {}",
            lam.len()
        )));
    }
    Ok(sigma_of(k, lam.values()))
}

/// `σ_k` of `λ` with the entries at `excluded` (ascending positions) removed.
pub fn sigma_excl(k: usize, lam: &Spectrum, excluded: &[usize]) -> Result<f64> {
    let n = lam.len();
    let (a, b) = match *excluded {
        [a] => (a, usize::MAX),
        [a, b] if a != b => (a, b),
        [_, _] => {
            return Err(Error::IndexDomain("excluded indices must be distinct".into()));
        }
        _ => {
            return Err(Error::IndexDomain(format!(
                "expected one or two excluded indices, got {}",
                excluded.len()
            )));
        }
    };
    if a >= n || (b != usize::MAX && b >= n) {
        return Err(Error::IndexDomain(format!(
            "excluded index out of range for n = {n}"
        )));
    }
    if k > n - excluded.len() {
        return Err(Error::IndexDomain(format!(
            "sigma index {k} exceeds n - |excluded| = {}",
            n - excluded.len()
        )));
    }
    Ok(sigma_skip(k, lam.values(), a, b))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConeMembership {
    pub inside: bool,
    /// `σ_1, …, σ_k`.
    pub sigmas: Vec<f64>,
}

impl ConeMembership {
    /// First `j` (1-based) with `σ_j <= threshold`, if any.
    pub fn first_failure(&self, threshold: f64) -> Option<(usize, f64)> {
        self.sigmas
            .iter()
            .enumerate()
            .find(|(_, &s)| s <= threshold)
            .map(|(j, &s)| (j + 1, s))
    }

    pub fn min_margin(&self) -> f64 {
        self.sigmas.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Membership in `Γ_k` with strict threshold `σ_j > eps` for `1 <= j <= k`.
pub fn cone_contains_eps(k: usize, lam: &Spectrum, eps: f64) -> Result<ConeMembership> {
    if k == 0 || k > lam.len() {
        return Err(Error::IndexDomain(format!(
            "cone index {k} outside 1..={}",
            lam.len()
        )));
    }
    Ok(cone_of_slice(k, lam.values(), eps))
}

pub fn cone_contains(k: usize, lam: &Spectrum) -> Result<ConeMembership> {
    cone_contains_eps(k, lam, 0.0)
}

pub(crate) fn cone_of_slice(k: usize, values: &[f64], eps: f64) -> ConeMembership {
    let all = sigma_all(values);
    let sigmas = all[1..=k].to_vec();
    let inside = sigmas.iter().all(|&s| s > eps);
    ConeMembership { inside, sigmas }
}

pub(crate) fn require_cone(k: usize, values: &[f64], eps: f64) -> Result<()> {
    let m = cone_of_slice(k, values, eps);
    match m.first_failure(eps) {
        None => Ok(()),
        Some((index, value)) => Err(Error::Admissibility { index, value }),
    }
}

/// `σ_k(λ) / σ_l(λ)` for `λ ∈ Γ_k`.
pub fn quotient(op: QuotientOp, lam: &Spectrum) -> Result<f64> {
    op.check_len(lam.len())?;
    require_cone(op.k, lam.values(), 0.0)?;
    Ok(quotient_unchecked(op, lam.values()))
}

pub(crate) fn quotient_unchecked(op: QuotientOp, values: &[f64]) -> f64 {
    sigma_of(op.k, values) / sigma_of(op.l, values)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaclaurinMargins {
    /// `[Ĥ_r/Ĥ_s]^{1/(r-s)} - [Ĥ_k/Ĥ_l]^{1/(k-l)}` with `Ĥ_j = σ_j / C(n,j)`.
    pub margin: f64,
    /// `l(n-k+1)σ_{k-1}σ_l - k(n-l+1)σ_kσ_{l-1}`, with `σ_{-1} = 0`.
    pub special: f64,
}

/// Margins of the generalized Newton–Maclaurin inequality for `λ ∈ Γ_k`.
pub fn check_maclaurin(
    (k, l): (usize, usize),
    (r, s): (usize, usize),
    lam: &Spectrum,
) -> Result<MaclaurinMargins> {
    let n = lam.len();
    if !(n >= k && k > l && n >= r && r > s && k >= r && l >= s) {
        return Err(Error::IndexDomain(format!(
            "Maclaurin indices violate n>=k>l>=0, n>=r>s>=0, k>=r, l>=s: \
             n={n} (k,l)=({k},{l}) (r,s)=({r},{s})"
        )));
    }
    require_cone(k, lam.values(), 0.0)?;
    Ok(maclaurin_unchecked(n, (k, l), (r, s), lam.values()))
}

pub(crate) fn maclaurin_unchecked(
    n: usize,
    (k, l): (usize, usize),
    (r, s): (usize, usize),
    values: &[f64],
) -> MaclaurinMargins {
    let sig = sigma_all(values);
    let hat = |j: usize| sig[j] / binomial(n, j);
    let lhs = (hat(k) / hat(l)).powf(1.0 / (k - l) as f64);
    let rhs = (hat(r) / hat(s)).powf(1.0 / (r - s) as f64);
    let sig_lm1 = if l == 0 { 0.0 } else { sig[l - 1] };
    let special = (l * (n - k + 1)) as f64 * sig[k - 1] * sig[l]
        - (k * (n - l + 1)) as f64 * sig[k] * sig_lm1;
    MaclaurinMargins {
        margin: rhs - lhs,
        special,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReverseCheck {
    /// `λ` at ascending position `n-k` (zero-based), i.e. `λ_{n-k+1}`.
    pub position_value: f64,
    /// `σ_{k-1}(λ | n-k+1)`.
    pub excluded_sigma: f64,
    /// `σ_{k-1}(λ | n-k+1) / σ_{k-1}(λ)`.
    pub ratio: f64,
}

impl ReverseCheck {
    pub fn holds(&self) -> bool {
        self.position_value > 0.0 && self.excluded_sigma > 0.0
    }
}

/// Positivity statements of the reverse inequality for `λ ∈ Γ_k`, plus the
/// ratio whose infimum is the (unspecified) constant `c(n,k)`.
pub fn check_reverse(k: usize, lam: &Spectrum) -> Result<ReverseCheck> {
    let n = lam.len();
    if k == 0 || k > n {
        return Err(Error::IndexDomain(format!("reverse index {k} outside 1..={n}")));
    }
    require_cone(k, lam.values(), 0.0)?;
    Ok(reverse_unchecked(k, lam.values()))
}

pub(crate) fn reverse_unchecked(k: usize, values: &[f64]) -> ReverseCheck {
    let n = values.len();
    let pos = n - k;
    let excluded_sigma = sigma_skip(k - 1, values, pos, usize::MAX);
    ReverseCheck {
        position_value: values[pos],
        excluded_sigma,
        ratio: excluded_sigma / sigma_of(k - 1, values),
    }
}
