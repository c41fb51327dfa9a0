//! Perturbation reduction of a linear pencil `T00 + μ T01`.
//!
//! Given two self-adjoint (or two skew-adjoint) matrices, [`reduce`] builds
//! the hierarchy of kernel projections `P_j`, reduced operators `T^(j,j)`,
//! cumulative projections `P̃_j = P̃_{j-1} P_j`, the limit projection
//! `𝒫(0) = ∏ P_j` and the limit operator `T^(p,p)` of the rescaled pencil
//! `𝒯(μ) = μ^{-p} (T00 + μ T01)`.
//!
//! The reduced coefficients obey the recursion
//!
//! ```text
//! T^(j+1, j+n) = - Σ_{r=1..n} (-1)^r Σ_{ν, k} S^(j,k1) T^(j,j+ν1) S^(j,k2) ... T^(j,j+νr) S^(j,k_{r+1})
//! ```
//!
//! where `ν` runs over compositions of `n` into `r` positive parts, `k` over
//! weak compositions of `r - 1` into `r + 1` parts, `S^(j,0) = -P_j` and
//! `S^(j,l) = (T^(j,j)^+)^l`.
//!
//! The μ-dependent quantities ([`curly_p_mu`], [`spectral_order_report`])
//! separate eigenvalues of size `μ^p` from eigenvalues of size `μ^{p-1}` and
//! larger, which double precision cannot resolve once `μ^p` drops below
//! about `1e-12`; those routines therefore diagonalise the pencil in
//! double-double arithmetic.

use ndarray::Array2;
use num_complex::{Complex, Complex64};
use num_traits::{One, Zero};
use thiserror::Error;
use twofloat::TwoFloat;

use crate::linalg::{
    self, adjoint_part, dd_div, identity, is_adjoint_kind, jacobi_eigh, max_abs, null_projection_scaled,
    pseudo_inverse_scaled, spectral_norm, zeros, Adjointness, CMatrix, LinalgError, DEFAULT_ADJ_TOL,
};

/// Tolerance for the adjointness of reduced coefficients, relative to their size.
const COEFF_ADJ_TOL: f64 = 1e-8;
/// Relative half-width of the band around `μ^{p-1/2}` where cluster membership is ambiguous.
const THRESHOLD_BAND: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReductionError {
    #[error("dimension mismatch: T00 is {t00:?}, T01 is {t01:?}")]
    DimensionMismatch { t00: (usize, usize), t01: (usize, usize) },
    #[error("input matrix {which} is not {kind:?} (deviation {deviation:.3e})")]
    InputAdjointness { which: &'static str, kind: Adjointness, deviation: f64 },
    #[error("reduced coefficient T^({j},{k}) lost its adjointness (deviation {deviation:.3e})")]
    AdjointnessViolated { j: usize, k: usize, deviation: f64 },
    #[error("reduction order p must be at least 1")]
    InvalidOrder,
    #[error("μ must lie in (0, 1), got {0}")]
    InvalidMu(f64),
    #[error("eigenvalue {eigenvalue:.6e} sits on the cluster threshold {threshold:.6e}; perturb μ")]
    DegenerateThreshold { eigenvalue: f64, threshold: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// The pencil `(T00, T01)` at one Fourier mode.
#[derive(Clone, Debug)]
pub struct SymbolPair {
    pub t00: CMatrix,
    pub t01: CMatrix,
    pub kind: Adjointness,
}

impl SymbolPair {
    pub fn new(t00: CMatrix, t01: CMatrix, kind: Adjointness) -> Result<Self, ReductionError> {
        if t00.nrows() != t00.ncols() || t00.dim() != t01.dim() {
            return Err(ReductionError::DimensionMismatch { t00: t00.dim(), t01: t01.dim() });
        }
        for (which, m) in [("T00", &t00), ("T01", &t01)] {
            if !is_adjoint_kind(m, kind, DEFAULT_ADJ_TOL) {
                let deviation = match kind {
                    Adjointness::SelfAdjoint => linalg::self_adjoint_deviation(m),
                    Adjointness::SkewAdjoint => linalg::skew_adjoint_deviation(m),
                };
                return Err(ReductionError::InputAdjointness { which, kind, deviation });
            }
        }
        Ok(Self { t00, t01, kind })
    }

    pub fn dim(&self) -> usize {
        self.t00.nrows()
    }

    /// Reference scale for rank decisions: `max(‖T00‖, ‖T01‖)`.
    pub fn scale(&self) -> f64 {
        spectral_norm(&self.t00).max(spectral_norm(&self.t01))
    }
}

#[derive(Clone, Debug)]
pub struct ReductionLevel {
    /// Orthogonal projection onto `ker T^(j,j)`.
    pub p: CMatrix,
    /// The reduced operator `T^(j,j)`.
    pub t: CMatrix,
    /// Cumulative projection `P̃_j = P_0 P_1 ... P_j`.
    pub p_tilde: CMatrix,
}

#[derive(Clone, Debug)]
pub struct ReductionOutput {
    pub p: usize,
    pub kind: Adjointness,
    pub levels: Vec<ReductionLevel>,
    /// `𝒫(0) = P̃_{p-1}`.
    pub p0_limit: CMatrix,
    /// `T^(p,p)`, the limit of `𝒫(μ)𝒯(μ)`.
    pub tpp: CMatrix,
}

/// Worst-case defects of the structural identities of a [`ReductionOutput`].
#[derive(Clone, Copy, Debug, Default)]
pub struct ReductionDefects {
    pub idempotence: f64,
    pub symmetry: f64,
    pub mutual_orthogonality: f64,
    pub product_vs_sum: f64,
    pub product_vs_limit: f64,
    pub kernel: f64,
    pub adjointness: f64,
}

impl ReductionDefects {
    pub fn max(&self) -> f64 {
        [
            self.idempotence,
            self.symmetry,
            self.mutual_orthogonality,
            self.product_vs_sum,
            self.product_vs_limit,
            self.kernel,
            self.adjointness,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

impl ReductionOutput {
    pub fn dim(&self) -> usize {
        self.p0_limit.nrows()
    }

    /// Measure every structural identity the hierarchy must satisfy.
    pub fn defects(&self) -> ReductionDefects {
        let n = self.dim();
        let eye = identity(n);
        let mut d = ReductionDefects::default();
        let mut product = eye.clone();
        let mut sum = zeros(n);
        for (j, lvl) in self.levels.iter().enumerate() {
            let (idem, sym) = linalg::projection_defects(&lvl.p);
            d.idempotence = d.idempotence.max(idem);
            d.symmetry = d.symmetry.max(sym);
            let scale = max_abs(&lvl.t).max(1.0);
            d.kernel = d
                .kernel
                .max(max_abs(&lvl.p.dot(&lvl.t)) / scale)
                .max(max_abs(&lvl.t.dot(&lvl.p)) / scale);
            let dev = match self.kind {
                Adjointness::SelfAdjoint => linalg::self_adjoint_deviation(&lvl.t),
                Adjointness::SkewAdjoint => linalg::skew_adjoint_deviation(&lvl.t),
            };
            d.adjointness = d.adjointness.max(dev);
            let comp_j = &eye - &lvl.p;
            for other in &self.levels[j + 1..] {
                let comp_o = &eye - &other.p;
                d.mutual_orthogonality = d.mutual_orthogonality.max(max_abs(&comp_j.dot(&comp_o)));
            }
            product = product.dot(&lvl.p);
            sum = sum + comp_j;
        }
        d.product_vs_sum = linalg::max_abs_diff(&product, &(&eye - &sum));
        d.product_vs_limit = linalg::max_abs_diff(&product, &self.p0_limit);
        d
    }
}

/// Compositions of `n` into exactly `r` positive parts, in lexicographic order.
pub fn compositions(n: usize, r: usize) -> Vec<Vec<usize>> {
    fn rec(left: usize, parts: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 0 {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        if left < parts {
            return;
        }
        for first in 1..=(left - (parts - 1)) {
            cur.push(first);
            rec(left - first, parts - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if r >= 1 {
        rec(n, r, &mut Vec::with_capacity(r), &mut out);
    }
    out
}

/// Weak compositions of `n` into exactly `parts` non-negative parts, lexicographic.
pub fn weak_compositions(n: usize, parts: usize) -> Vec<Vec<usize>> {
    fn rec(left: usize, parts: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for first in 0..=left {
            cur.push(first);
            rec(left - first, parts - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if parts >= 1 {
        rec(n, parts, &mut Vec::with_capacity(parts), &mut out);
    }
    out
}

struct LevelOps {
    /// `S^(j,l)` for `l = 0, 1, ...`, grown on demand.
    s: Vec<CMatrix>,
    pinv: CMatrix,
}

impl LevelOps {
    fn s_power(&mut self, l: usize) -> &CMatrix {
        while self.s.len() <= l {
            let next = if self.s.len() == 1 { self.pinv.clone() } else { self.s.last().unwrap().dot(&self.pinv) };
            self.s.push(next);
        }
        &self.s[l]
    }
}

fn check_coefficient(m: CMatrix, kind: Adjointness, j: usize, k: usize, reference: f64) -> Result<CMatrix, ReductionError> {
    let dev = match kind {
        Adjointness::SelfAdjoint => linalg::self_adjoint_deviation(&m),
        Adjointness::SkewAdjoint => linalg::skew_adjoint_deviation(&m),
    };
    let bound = COEFF_ADJ_TOL * max_abs(&m) + 1e-12 * reference;
    if dev > bound {
        return Err(ReductionError::AdjointnessViolated { j, k, deviation: dev });
    }
    Ok(adjoint_part(&m, kind))
}

/// Run the reduction to order `p`.
pub fn reduce(pair: &SymbolPair, p: usize, tau_rank: f64) -> Result<ReductionOutput, ReductionError> {
    if p == 0 {
        return Err(ReductionError::InvalidOrder);
    }
    let n = pair.dim();
    let eye = identity(n);
    let reference = pair.scale();
    let kind = pair.kind;

    // coeffs[m] = T^(j, j+m) for the current level j, m = 0..=p-j
    let mut coeffs: Vec<CMatrix> = (0..=p)
        .map(|m| match m {
            0 => pair.t00.clone(),
            1 => pair.t01.clone(),
            _ => zeros(n),
        })
        .collect();
    let mut levels = Vec::with_capacity(p);
    let mut p_tilde = eye.clone();
    let mut exhausted = false;

    for j in 0..p {
        let tjj = coeffs[0].clone();
        if exhausted {
            levels.push(ReductionLevel { p: eye.clone(), t: zeros(n), p_tilde: p_tilde.clone() });
            continue;
        }
        let proj = null_projection_scaled(&tjj, tau_rank, reference)?;
        let pinv = pseudo_inverse_scaled(&tjj, tau_rank, reference)?;
        p_tilde = p_tilde.dot(&proj);
        levels.push(ReductionLevel { p: proj.clone(), t: tjj, p_tilde: p_tilde.clone() });

        if linalg::projection_rank(&p_tilde) == 0 {
            exhausted = true;
            p_tilde = zeros(n);
            if let Some(last) = levels.last_mut() {
                last.p_tilde = zeros(n);
            }
            coeffs = vec![zeros(n); p - j];
            continue;
        }

        let mut ops = LevelOps { s: vec![proj.mapv(|z| -z)], pinv };
        let zero_coeff: Vec<bool> = coeffs.iter().map(|c| max_abs(c) == 0.0).collect();
        let mut next = Vec::with_capacity(p - j);
        // next[m] = T^(j+1, j+1+m) = formula with index n = m + 1
        for m in 0..(p - j) {
            let order = m + 1;
            let mut acc = zeros(n);
            for r in 1..=order {
                let sign = if r % 2 == 0 { -1.0 } else { 1.0 }; // -(-1)^r
                for nu in compositions(order, r) {
                    if nu.iter().any(|&v| v >= coeffs.len() || zero_coeff[v]) {
                        continue;
                    }
                    for ks in weak_compositions(r - 1, r + 1) {
                        let mut term = ops.s_power(ks[0]).clone();
                        for (idx, &v) in nu.iter().enumerate() {
                            term = term.dot(&coeffs[v]).dot(ops.s_power(ks[idx + 1]));
                        }
                        acc.scaled_add(Complex64::new(sign, 0.0), &term);
                    }
                }
            }
            next.push(check_coefficient(acc, kind, j + 1, j + 1 + m, reference)?);
        }
        coeffs = next;
    }

    let tpp = if exhausted { zeros(n) } else { coeffs[0].clone() };
    Ok(ReductionOutput { p, kind, levels, p0_limit: p_tilde, tpp })
}

type DdMatrix = Array2<Complex<TwoFloat>>;

fn to_dd(z: Complex64) -> Complex<TwoFloat> {
    Complex::new(TwoFloat::from(z.re), TwoFloat::from(z.im))
}

fn from_dd(z: Complex<TwoFloat>) -> Complex64 {
    Complex64::new(f64::from(z.re), f64::from(z.im))
}

/// Spectrum of the pencil `T00 + μ T01` in its self-adjoint frame, computed
/// in double-double precision.
#[derive(Clone, Debug)]
pub struct PencilSpectrum {
    pub mu: f64,
    pub kind: Adjointness,
    values: Vec<TwoFloat>,
    vectors: DdMatrix,
}

impl PencilSpectrum {
    pub fn compute(pair: &SymbolPair, mu: f64) -> Result<Self, ReductionError> {
        let mu_dd = TwoFloat::from(mu);
        let frame = match pair.kind {
            Adjointness::SelfAdjoint => Complex::new(TwoFloat::from(1.0), TwoFloat::from(0.0)),
            Adjointness::SkewAdjoint => Complex::new(TwoFloat::from(0.0), TwoFloat::from(1.0)),
        };
        let n = pair.dim();
        let mut h: DdMatrix = Array2::from_shape_fn((n, n), |(r, c)| {
            (to_dd(pair.t00[[r, c]]) + to_dd(pair.t01[[r, c]]).scale(mu_dd)) * frame
        });
        // exact Hermitian symmetrisation in extended precision
        let half = TwoFloat::from(0.5);
        for r in 0..n {
            for c in r..n {
                let avg = (h[[r, c]] + h[[c, r]].conj()).scale(half);
                h[[r, c]] = avg;
                h[[c, r]] = avg.conj();
            }
        }
        let (values, vectors) = jacobi_eigh(h)?;
        Ok(Self { mu, kind: pair.kind, values, vectors })
    }

    /// Eigenvalues of the self-adjoint frame (`i·(T00 + μT01)` for skew pencils), ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.values.iter().map(|v| f64::from(*v)).collect()
    }

    fn threshold(&self, p: usize) -> TwoFloat {
        let mu = TwoFloat::from(self.mu);
        let mut t = mu.sqrt();
        for _ in 1..p {
            t *= mu;
        }
        t
    }

    /// Indices of eigenvalues below `μ^{p-1/2}`; also reports the eigenvalue
    /// nearest the threshold if it lies in the ambiguous band.
    fn cluster(&self, p: usize) -> (Vec<bool>, Option<(f64, f64)>) {
        let thr = self.threshold(p);
        let lo = thr * TwoFloat::from(1.0 - THRESHOLD_BAND);
        let hi = thr * TwoFloat::from(1.0 + THRESHOLD_BAND);
        let mut degenerate = None;
        let mask = self
            .values
            .iter()
            .map(|v| {
                let a = v.abs();
                if a >= lo && a <= hi {
                    degenerate = Some((f64::from(*v), f64::from(thr)));
                }
                a < thr
            })
            .collect();
        (mask, degenerate)
    }

    fn weighted_sum(&self, mask: &[bool], weight: impl Fn(TwoFloat) -> TwoFloat) -> DdMatrix {
        let n = self.values.len();
        let mut out: DdMatrix = Array2::from_elem((n, n), Complex::zero());
        for (j, (&lam, &keep)) in self.values.iter().zip(mask).enumerate() {
            if !keep {
                continue;
            }
            let w = weight(lam);
            for r in 0..n {
                let vr = self.vectors[[r, j]].scale(w);
                for c in 0..n {
                    out[[r, c]] = out[[r, c]] + vr * self.vectors[[c, j]].conj();
                }
            }
        }
        out
    }
}

/// Orthogonal projection onto the eigenvectors of `T00 + μT01` whose
/// eigenvalues are smaller than `μ^{p-1/2}` in modulus.
pub fn curly_p_mu(pair: &SymbolPair, p: usize, mu: f64) -> Result<CMatrix, ReductionError> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(ReductionError::InvalidMu(mu));
    }
    if p == 0 {
        return Err(ReductionError::InvalidOrder);
    }
    let spec = PencilSpectrum::compute(pair, mu)?;
    let (mask, degenerate) = spec.cluster(p);
    if let Some((eigenvalue, threshold)) = degenerate {
        return Err(ReductionError::DegenerateThreshold { eigenvalue, threshold });
    }
    Ok(spec.weighted_sum(&mask, |_| TwoFloat::from(1.0)).mapv(from_dd))
}

#[derive(Clone, Debug)]
pub struct OrderRow {
    pub mu: f64,
    /// `‖𝒫(μ)𝒯(μ)𝒫(μ)‖`.
    pub b1: f64,
    /// Smallest singular value of `𝒯(μ)` on `range(I - 𝒫(μ))`; `None` if that range is trivial.
    pub b2: Option<f64>,
    /// `‖𝒫(μ)𝒯(μ) - T^(p,p)‖`.
    pub e: f64,
    /// `‖𝒫𝒯 - 𝒯𝒫‖_max / ‖𝒯‖`.
    pub commutation: f64,
    /// `‖𝒫(μ) - 𝒫(0)‖`.
    pub projection_gap: f64,
    pub cluster_rank: usize,
    /// An eigenvalue sat within the ambiguous band around the threshold.
    pub degenerate: bool,
}

#[derive(Clone, Debug)]
pub struct OrderReport {
    pub p: usize,
    pub rows: Vec<OrderRow>,
    /// `e(μ)` fails to decrease somewhere along the (descending) μ list.
    /// Increases that stay below `E_NOISE_FLOOR·‖pair‖` are roundoff and do not count.
    pub e_non_monotone: bool,
}

impl OrderReport {
    /// Least-squares slope of `log e` against `log μ`, skipping rows with `e == 0`.
    pub fn e_slope(&self) -> Option<f64> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = self.rows.iter().filter(|r| r.e > 0.0).map(|r| (r.mu, r.e)).unzip();
        crate::fit::loglog_slope(&xs, &ys)
    }
}

/// `e(μ)` values below this multiple of the pencil scale count as converged.
pub const E_NOISE_FLOOR: f64 = 1e-12;

/// Report the two-sided bounds and the convergence `𝒫(μ)𝒯(μ) → T^(p,p)` over a μ list.
pub fn spectral_order_report(
    pair: &SymbolPair,
    p: usize,
    mu_list: &[f64],
    tau_rank: f64,
) -> Result<OrderReport, ReductionError> {
    let red = reduce(pair, p, tau_rank)?;
    order_report_with(pair, &red, mu_list)
}

/// As [`spectral_order_report`] but reusing an existing reduction of the same pair.
pub fn order_report_with(pair: &SymbolPair, red: &ReductionOutput, mu_list: &[f64]) -> Result<OrderReport, ReductionError> {
    let p = red.p;
    let back = match pair.kind {
        Adjointness::SelfAdjoint => Complex64::one(),
        Adjointness::SkewAdjoint => Complex64::new(0.0, -1.0),
    };
    let mut rows = Vec::with_capacity(mu_list.len());
    for &mu in mu_list {
        if !(mu > 0.0 && mu < 1.0) {
            return Err(ReductionError::InvalidMu(mu));
        }
        let spec = PencilSpectrum::compute(pair, mu)?;
        let (mask, degenerate) = spec.cluster(p);
        let mu_dd = TwoFloat::from(mu);
        let mut mu_p = TwoFloat::from(1.0);
        for _ in 0..p {
            mu_p *= mu_dd;
        }
        let scaled: Vec<f64> = spec.values.iter().map(|v| f64::from(dd_div(*v, mu_p)).abs()).collect();
        let b1 = scaled.iter().zip(&mask).filter(|(_, &k)| k).map(|(v, _)| *v).fold(0.0, f64::max);
        let b2 = scaled.iter().zip(&mask).filter(|(_, &k)| !k).map(|(v, _)| *v).reduce(f64::min);
        let pt = spec.weighted_sum(&mask, |lam| dd_div(lam, mu_p)).mapv(|z| from_dd(z) * back);
        let e = spectral_norm(&(&pt - &red.tpp));
        let proj = spec.weighted_sum(&mask, |_| TwoFloat::from(1.0)).mapv(from_dd);
        let projection_gap = spectral_norm(&(&proj - &red.p0_limit));

        // brute-force commutator in double precision with the rounded projection
        let mu_p_f = f64::from(mu_p);
        let curly_t = (&pair.t00 + &pair.t01.mapv(|z| z * mu)).mapv(|z| z / mu_p_f);
        let t_norm = spectral_norm(&curly_t).max(f64::MIN_POSITIVE);
        let commutation = linalg::max_abs_diff(&proj.dot(&curly_t), &curly_t.dot(&proj)) / t_norm;

        rows.push(OrderRow {
            mu,
            b1,
            b2,
            e,
            commutation,
            projection_gap,
            cluster_rank: mask.iter().filter(|&&k| k).count(),
            degenerate: degenerate.is_some(),
        });
    }
    let floor = E_NOISE_FLOOR * pair.scale().max(red.tpp.iter().map(|z| z.norm()).fold(0.0, f64::max));
    let e_non_monotone = rows.windows(2).any(|w| w[1].e > w[0].e && w[1].e > floor);
    Ok(OrderReport { p, rows, e_non_monotone })
}

/// One nonzero eigenvalue of a reduced operator and its counterpart in the
/// spectrum of the pencil at a given μ.
#[derive(Clone, Debug)]
pub struct EigenMatch {
    pub level: usize,
    /// Eigenvalue of `T^(j,j)` in the self-adjoint frame.
    pub lambda: f64,
    /// Nearest pencil eigenvalue, rescaled by `μ^{-j}`.
    pub matched: f64,
    pub relative_error: f64,
}

/// Match every nonzero eigenvalue of `T^(j,j)`, `j < p`, against the
/// eigenvalues of `T00 + μT01` rescaled by `μ^{-j}`.
pub fn match_level_eigenvalues(
    pair: &SymbolPair,
    red: &ReductionOutput,
    mu: f64,
    tau_rank: f64,
) -> Result<Vec<EigenMatch>, ReductionError> {
    let spec = PencilSpectrum::compute(pair, mu)?;
    let reference = pair.scale();
    let mut out = Vec::new();
    for (j, lvl) in red.levels.iter().enumerate() {
        let (_, eig) = linalg::normal_eig(&lvl.t, 1e-8)?;
        let cutoff = tau_rank * eig.max_abs_value().max(reference);
        let mut mu_j = TwoFloat::from(1.0);
        for _ in 0..j {
            mu_j *= TwoFloat::from(mu);
        }
        for &lam in eig.values.iter().filter(|l| l.abs() > cutoff) {
            let matched = spec
                .values
                .iter()
                .map(|v| f64::from(dd_div(*v, mu_j)))
                .min_by(|a, b| (a - lam).abs().partial_cmp(&(b - lam).abs()).unwrap())
                .unwrap_or(f64::NAN);
            out.push(EigenMatch { level: j, lambda: lam, matched, relative_error: (matched - lam).abs() / lam.abs() });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs_diff, pseudo_inverse, DEFAULT_RANK_TOL};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn mat(rows: &[&[Complex64]]) -> CMatrix {
        let n = rows.len();
        Array2::from_shape_fn((n, rows[0].len()), |(i, j)| rows[i][j])
    }

    /// Directional pair `L = diag(ik, 0)`, `M = [[0, iℓ], [iℓ, 0]]`.
    pub(crate) fn dx_dy_pair(k: f64, l: f64) -> SymbolPair {
        let z = c(0.0, 0.0);
        let t00 = mat(&[&[c(0.0, k), z], &[z, z]]);
        let t01 = mat(&[&[z, c(0.0, l)], &[c(0.0, l), z]]);
        SymbolPair::new(t00, t01, Adjointness::SkewAdjoint).unwrap()
    }

    /// Five-component pencil with a rotation block and a coupled 2x2 lower block.
    pub(crate) fn five_component(a: f64, b: f64, cc: f64, d: f64, m: f64) -> SymbolPair {
        let z = c(0.0, 0.0);
        let t00 = mat(&[
            &[z, c(1.0, 0.0), z, z, z],
            &[c(-1.0, 0.0), z, z, z, z],
            &[z, z, z, z, z],
            &[z, z, z, z, z],
            &[z, z, z, z, z],
        ]);
        let t01 = mat(&[
            &[z, z, z, c(a, 0.0), c(b, 0.0)],
            &[z, z, z, c(cc, 0.0), c(d, 0.0)],
            &[z, z, c(0.0, m), z, z],
            &[c(-a, 0.0), c(-cc, 0.0), z, z, z],
            &[c(-b, 0.0), c(-d, 0.0), z, z, z],
        ]);
        SymbolPair::new(t00, t01, Adjointness::SkewAdjoint).unwrap()
    }

    #[test]
    fn composition_counts() {
        assert_eq!(compositions(4, 2), vec![vec![1, 3], vec![2, 2], vec![3, 1]]);
        assert_eq!(compositions(3, 3), vec![vec![1, 1, 1]]);
        assert!(compositions(2, 3).is_empty());
        assert_eq!(weak_compositions(0, 2), vec![vec![0, 0]]);
        assert_eq!(weak_compositions(1, 3), vec![vec![0, 0, 1], vec![0, 1, 0], vec![1, 0, 0]]);
        // C(n + k - 1, k - 1)
        assert_eq!(weak_compositions(3, 4).len(), 20);
    }

    #[test]
    fn dx_dy_hierarchy() {
        let pair = dx_dy_pair(2.0, 3.0);
        let red = reduce(&pair, 3, DEFAULT_RANK_TOL).unwrap();
        let z = c(0.0, 0.0);
        assert!(max_abs_diff(&red.levels[0].p, &mat(&[&[z, z], &[z, c(1.0, 0.0)]])) < 1e-12);
        assert!(max_abs(&red.levels[1].t) < 1e-10);
        assert!(max_abs_diff(&red.levels[2].t, &mat(&[&[z, z], &[z, c(0.0, -4.5)]])) < 1e-10);
        assert!(max_abs(&red.p0_limit) < 1e-12);
        assert!(max_abs(&red.tpp) < 1e-10);
        assert!(red.defects().max() < 1e-9);
    }

    #[test]
    fn dx_dy_degenerate_wavenumbers() {
        // k = 0: the perturbation acts alone at first order
        let red = reduce(&dx_dy_pair(0.0, 3.0), 3, DEFAULT_RANK_TOL).unwrap();
        assert!(max_abs_diff(&red.levels[0].p, &identity(2)) < 1e-12);
        assert!(max_abs_diff(&red.levels[1].t, &dx_dy_pair(0.0, 3.0).t01) < 1e-12);
        assert!(max_abs(&red.levels[1].p) < 1e-12);
        assert!(max_abs(&red.p0_limit) < 1e-12);
        // k = ℓ = 0: nothing happens at any order
        let red = reduce(&dx_dy_pair(0.0, 0.0), 4, DEFAULT_RANK_TOL).unwrap();
        for lvl in &red.levels {
            assert!(max_abs_diff(&lvl.p, &identity(2)) < 1e-12);
            assert!(max_abs(&lvl.t) == 0.0);
        }
        assert!(max_abs_diff(&red.p0_limit, &identity(2)) < 1e-12);
    }

    #[test]
    fn five_component_generic_coupling() {
        let pair = five_component(1.0, 2.0, 3.0, 4.0, 5.0);
        let red = reduce(&pair, 3, DEFAULT_RANK_TOL).unwrap();
        let mut t11 = zeros(5);
        t11[[2, 2]] = c(0.0, 5.0);
        assert!(max_abs_diff(&red.levels[1].t, &t11) < 1e-10);
        let mut t22 = zeros(5);
        t22[[3, 4]] = c(2.0, 0.0);
        t22[[4, 3]] = c(-2.0, 0.0);
        assert!(max_abs_diff(&red.levels[2].t, &t22) < 1e-10);
        assert!(max_abs(&red.tpp) < 1e-10);
        assert!(max_abs(&red.p0_limit) < 1e-10);
        assert!(red.defects().max() < 1e-9);
    }

    #[test]
    fn five_component_degenerate_coupling_keeps_two_dim_kernel() {
        let pair = five_component(1.0, 2.0, 2.0, 4.0, 5.0);
        let red = reduce(&pair, 3, DEFAULT_RANK_TOL).unwrap();
        assert!(max_abs(&red.levels[2].t) < 1e-10);
        assert!(max_abs(&red.tpp) < 1e-10);
        assert_eq!(linalg::projection_rank(&red.p0_limit), 2);
        // the kernel contains (0, 0, 0, -b, a)
        let v = ndarray::arr1(&[c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-2.0, 0.0), c(1.0, 0.0)]);
        let pv = red.p0_limit.dot(&v);
        assert!(pv.iter().zip(v.iter()).all(|(x, y)| (x - y).norm() < 1e-10));
    }

    #[test]
    fn unperturbed_pencil() {
        let pair = SymbolPair::new(dx_dy_pair(2.0, 0.0).t00, zeros(2), Adjointness::SkewAdjoint).unwrap();
        let red = reduce(&pair, 3, DEFAULT_RANK_TOL).unwrap();
        let p0 = linalg::null_projection(&pair.t00, DEFAULT_RANK_TOL).unwrap();
        assert!(max_abs_diff(&red.p0_limit, &p0) < 1e-14);
        for lvl in &red.levels[1..] {
            assert!(max_abs(&lvl.t) == 0.0);
        }
        let pm = curly_p_mu(&pair, 3, 1e-3).unwrap();
        assert!(max_abs_diff(&pm, &p0) < 1e-14);
    }

    #[test]
    fn hand_formulas_for_first_two_levels() {
        let pair = five_component(0.3, -1.1, 0.7, 2.0, 1.5);
        let red = reduce(&pair, 2, DEFAULT_RANK_TOL).unwrap();
        let p0 = &red.levels[0].p;
        let t11 = p0.dot(&pair.t01).dot(p0);
        assert!(max_abs_diff(&red.levels[1].t, &t11) < 1e-14);
        let pt1 = &red.levels[1].p_tilde;
        let pinv = pseudo_inverse(&pair.t00, DEFAULT_RANK_TOL).unwrap();
        let t22 = pt1.dot(&pair.t01).dot(&pinv).dot(&pair.t01).dot(pt1).mapv(|z| -z);
        assert!(max_abs_diff(&red.tpp, &t22) < 1e-10);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let a = dx_dy_pair(1.0, 1.0);
        assert!(matches!(
            SymbolPair::new(a.t00.clone(), identity(3), Adjointness::SkewAdjoint),
            Err(ReductionError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            SymbolPair::new(a.t00.clone(), identity(2), Adjointness::SkewAdjoint),
            Err(ReductionError::InputAdjointness { .. })
        ));
        assert!(matches!(reduce(&a, 0, DEFAULT_RANK_TOL), Err(ReductionError::InvalidOrder)));
        assert!(matches!(curly_p_mu(&a, 2, 1.5), Err(ReductionError::InvalidMu(_))));
    }

    #[test]
    fn curly_p_mu_approaches_limit_projection() {
        let pair = dx_dy_pair(2.0, 3.0);
        let red = reduce(&pair, 3, DEFAULT_RANK_TOL).unwrap();
        // with p = 3 nothing is of size μ^3 here, so use p = 2 to see the slow mode
        let red2 = reduce(&pair, 2, DEFAULT_RANK_TOL).unwrap();
        let pm = curly_p_mu(&pair, 2, 1e-3).unwrap();
        assert!(max_abs_diff(&pm, &red2.p0_limit) < 1e-2);
        let pm3 = curly_p_mu(&pair, 3, 1e-3).unwrap();
        assert!(max_abs_diff(&pm3, &red.p0_limit) < 1e-2);
    }

    #[test]
    fn order_report_for_dx_dy_pair() {
        let pair = dx_dy_pair(2.0, 3.0);
        let rep = spectral_order_report(&pair, 2, &[1e-2, 1e-3, 1e-4], DEFAULT_RANK_TOL).unwrap();
        assert!(!rep.e_non_monotone);
        assert!(rep.rows.last().unwrap().e < 1e-3);
        for row in &rep.rows {
            assert_eq!(row.cluster_rank, 1);
            assert!((row.b1 - 4.5).abs() < 0.1);
            assert!(row.commutation < 1e-9);
        }
        let slope = rep.e_slope().unwrap();
        assert!(slope >= 0.9, "slope {slope}");
    }

    #[test]
    fn order_report_with_invertible_leading_term() {
        let t00 = mat(&[&[c(0.0, 2.0), c(0.0, 0.0)], &[c(0.0, 0.0), c(0.0, -1.0)]]);
        let pair = SymbolPair::new(t00, zeros(2), Adjointness::SkewAdjoint).unwrap();
        let rep = spectral_order_report(&pair, 3, &[1e-2, 1e-3], DEFAULT_RANK_TOL).unwrap();
        for row in &rep.rows {
            assert_eq!(row.cluster_rank, 0);
            assert_eq!(row.b1, 0.0);
            assert_eq!(row.e, 0.0);
        }
    }

    #[test]
    fn degenerate_threshold_is_reported() {
        // eigenvalue of i·μT01 equals μ·1, threshold for p = 1 is μ^{1/2}
        let z = c(0.0, 0.0);
        let t01 = mat(&[&[c(0.0, 1.0), z], &[z, z]]);
        let pair = SymbolPair::new(zeros(2), t01, Adjointness::SkewAdjoint).unwrap();
        let mu: f64 = 0.25;
        // |λ| = 0.25 vs threshold 0.5: fine
        assert!(curly_p_mu(&pair, 1, mu).is_ok());
        let t01b = mat(&[&[c(0.0, 2.0), z], &[z, z]]);
        let pair_b = SymbolPair::new(zeros(2), t01b, Adjointness::SkewAdjoint).unwrap();
        assert!(matches!(curly_p_mu(&pair_b, 1, mu), Err(ReductionError::DegenerateThreshold { .. })));
    }
}
