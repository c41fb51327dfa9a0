//! Seeded random skew pencils whose reduction has nontrivial levels 0 through 3.
//!
//! Construction in an adapted basis `B0 ⊕ B1 ⊕ B2 ⊕ B3` (dimensions 3, 0 or 1, 1, 1):
//! `T00 = D0` on `B0` with an indefinite spectrum, `T01` carries a small block
//! `E00` on `B0`, a decoupled level-one eigenvalue on `B1`, and couplings
//! `B0 ↔ B2`, `B0 ↔ B3` by vectors `c2`, `c3`. The vector `c3` is isotropic for
//! `D0⁻¹` and `D0⁻¹`-orthogonal to `c2`, so `B3` survives the second level and
//! picks up a third-order eigenvalue through `E00`. A random monomial unitary
//! then mixes the basis, and both matrices are rescaled so every entry is ≤ 1.
//!
//! Draws are rejected only on structural grounds read off the reduction
//! (level ranks as designed, nonzero level eigenvalues at least `MIN_LEVEL_EIG`
//! so that the scales separate for μ ≤ 1e-2); none of the suite's checks
//! enter the rejection rule.

use anyhow::{anyhow, Result};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use threescale_core::linalg::{self, Adjointness, CMatrix};
use threescale_core::reduction::{match_level_eigenvalues, order_report_with, reduce, ReductionOutput, SymbolPair};

/// Reduction order used by the suite.
pub const SUITE_ORDER: usize = 3;
/// Smallest admissible nonzero level eigenvalue.
pub const MIN_LEVEL_EIG: f64 = 0.2;
const MAX_ATTEMPTS: usize = 1000;

#[derive(Clone, Debug)]
pub struct Member {
    pub id: usize,
    pub pair: SymbolPair,
    pub reduction: ReductionOutput,
    /// Draws rejected before this member.
    pub rejected: usize,
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn gaussian(rng: &mut ChaCha8Rng) -> Complex64 {
    c(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Random monomial unitary: a permutation with phases in `{±1, ±i}`. Its
/// entries are exact, so the mixed pencil keeps an exactly singular `T00`;
/// a dense unitary rounded to f64 leaves kernel noise near `1e-16`, which
/// at `μ³ = 1e-12` is as large as the `O(μ)` signal the suite measures.
fn random_monomial(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let phases = [c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0), c(0.0, -1.0)];
    let mut q = linalg::zeros(n);
    for (col, &row) in perm.iter().enumerate() {
        q[[row, col]] = phases[rng.random_range(0..4)];
    }
    q
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn draw(rng: &mut ChaCha8Rng) -> Result<SymbolPair> {
    let n = if rng.random_bool(0.5) { 5 } else { 6 };
    let (b2, b3) = (n - 2, n - 1);
    let alpha = [uniform(rng, 0.5, 1.0), uniform(rng, 0.5, 1.0), -uniform(rng, 0.5, 1.0)];
    // D0⁻¹ = -i diag(w)
    let w: Vec<f64> = alpha.iter().map(|a| 1.0 / a).collect();
    let mut t00 = linalg::zeros(n);
    let mut t01 = linalg::zeros(n);
    for i in 0..3 {
        t00[[i, i]] = c(0.0, alpha[i]);
    }
    // small skew block on B0
    for i in 0..3 {
        t01[[i, i]] = c(0.0, 0.3 * uniform(rng, -1.0, 1.0));
        for j in (i + 1)..3 {
            let z = gaussian(rng) * 0.15;
            t01[[i, j]] = z;
            t01[[j, i]] = -z.conj();
        }
    }
    if n == 6 {
        let beta = uniform(rng, 0.5, 1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        t01[[3, 3]] = c(0.0, beta);
    }
    // isotropic c3: Σ w_i |c3_i|² = 0
    let theta = uniform(rng, 0.2, 1.37);
    let gamma = uniform(rng, 0.4, 0.8);
    let mag = [alpha[0].sqrt() * theta.cos(), alpha[1].sqrt() * theta.sin(), (-alpha[2]).sqrt()];
    let c3: Vec<Complex64> = mag.iter().map(|m| Complex64::from_polar(gamma * m, uniform(rng, 0.0, std::f64::consts::TAU))).collect();
    // c2 ⟂_W c3
    let raw: Vec<Complex64> = (0..3).map(|_| gaussian(rng) * 0.5).collect();
    let inner = |a: &[Complex64], b: &[Complex64]| -> Complex64 { (0..3).map(|i| a[i].conj() * w[i] * b[i]).sum() };
    let pivot = (0..3).max_by(|&a, &b| (c3[a].norm() * w[a].abs()).partial_cmp(&(c3[b].norm() * w[b].abs())).unwrap()).unwrap();
    let mut y = vec![c(0.0, 0.0); 3];
    y[pivot] = c(1.0, 0.0);
    let coef = inner(&c3, &raw) / inner(&c3, &y);
    let c2: Vec<Complex64> = (0..3).map(|i| raw[i] - coef * y[i]).collect();
    for i in 0..3 {
        t01[[i, b2]] = c2[i];
        t01[[b2, i]] = -c2[i].conj();
        t01[[i, b3]] = c3[i];
        t01[[b3, i]] = -c3[i].conj();
    }
    let q = random_monomial(n, rng);
    let qh = linalg::adjoint(&q);
    let mut t00 = q.dot(&t00).dot(&qh);
    let mut t01 = q.dot(&t01).dot(&qh);
    let top = linalg::max_abs(&t00).max(linalg::max_abs(&t01));
    if top > 1.0 {
        t00.mapv_inplace(|z| z / top);
        t01.mapv_inplace(|z| z / top);
    }
    t00 = linalg::adjoint_part(&t00, Adjointness::SkewAdjoint);
    t01 = linalg::adjoint_part(&t01, Adjointness::SkewAdjoint);
    Ok(SymbolPair::new(t00, t01, Adjointness::SkewAdjoint)?)
}

/// Structural admissibility: level ranks `[3, n-5, 1, 1]`, separated scales.
fn admissible(pair: &SymbolPair, red: &ReductionOutput) -> Result<bool> {
    let n = pair.dim();
    let want = [3, n - 5, 1, 1];
    for (j, lvl) in red.levels.iter().enumerate().take(SUITE_ORDER) {
        let (_, eig) = linalg::normal_eig(&lvl.t, 1e-8)?;
        let nonzero: Vec<f64> = eig.values.iter().copied().filter(|v| v.abs() > 1e-8).collect();
        if nonzero.len() != want[j] || nonzero.iter().any(|v| v.abs() < MIN_LEVEL_EIG) {
            return Ok(false);
        }
    }
    let (_, top) = linalg::normal_eig(&red.tpp, 1e-8)?;
    let nonzero: Vec<f64> = top.values.iter().copied().filter(|v| v.abs() > 1e-8).collect();
    Ok(nonzero.len() == want[3] && nonzero.iter().all(|v| v.abs() >= MIN_LEVEL_EIG))
}

/// `count` admissible members from a seed; identical seeds give identical members.
pub fn generate(count: usize, seed: u64, tau_rank: f64) -> Result<Vec<Member>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut rejected = 0;
    while out.len() < count {
        if rejected > MAX_ATTEMPTS * count.max(1) {
            return Err(anyhow!("random ensemble: too many rejected draws ({rejected})"));
        }
        let pair = draw(&mut rng)?;
        let red = reduce(&pair, SUITE_ORDER, tau_rank)?;
        if admissible(&pair, &red)? {
            out.push(Member { id: out.len(), pair, reduction: red, rejected });
            rejected = 0;
        } else {
            rejected += 1;
        }
    }
    Ok(out)
}

/// Per-member outcome of the eigen-oracle and projection-bound checks.
#[derive(Clone, Debug)]
pub struct SuiteRow {
    pub id: usize,
    pub dim: usize,
    /// Number of (level, eigenvalue, μ) matches made.
    pub matches: usize,
    /// `max relative_error / μ` over all matches.
    pub max_match_ratio: f64,
    /// `max ‖𝒫𝒯 - 𝒯𝒫‖ / ‖𝒯‖` over μ.
    pub max_commutation: f64,
    pub e_slope: f64,
    pub e_monotone: bool,
    /// `max b1 / min b1 - 1` over μ.
    pub b1_variation: f64,
    /// `min_μ μ·b2(μ)`.
    pub min_mu_b2: f64,
    /// `½ min |λ|` over nonzero eigenvalues of `T^(j,j)`, `j < p`: a μ-independent floor.
    pub b2_floor: f64,
    pub degenerate: bool,
}

impl SuiteRow {
    /// Eigenvalue matching within `5μ`, commutation within `1e-9`, `e(μ)` decreasing with slope at least 0.9.
    pub fn eigen_oracle_pass(&self) -> bool {
        self.matches > 0 && self.max_match_ratio <= 5.0 && self.max_commutation <= 1e-9 && self.e_slope >= 0.9 && self.e_monotone && !self.degenerate
    }

    /// `b1` within 20 %, `μ b2` above the floor.
    pub fn projection_bounds_pass(&self) -> bool {
        self.b1_variation <= 0.2 && self.min_mu_b2 >= self.b2_floor && self.b2_floor > 0.0 && !self.degenerate
    }
}

pub fn evaluate(member: &Member, mu_list: &[f64], tau_rank: f64) -> Result<SuiteRow> {
    let pair = &member.pair;
    let red = &member.reduction;
    let mut matches = 0;
    let mut max_match_ratio: f64 = 0.0;
    for &mu in mu_list {
        for m in match_level_eigenvalues(pair, red, mu, tau_rank)? {
            matches += 1;
            max_match_ratio = max_match_ratio.max(m.relative_error / mu);
        }
    }
    let report = order_report_with(pair, red, mu_list)?;
    let b1: Vec<f64> = report.rows.iter().map(|r| r.b1).collect();
    let b1_max = b1.iter().copied().fold(0.0, f64::max);
    let b1_min = b1.iter().copied().fold(f64::INFINITY, f64::min);
    let min_mu_b2 = report.rows.iter().map(|r| r.mu * r.b2.unwrap_or(f64::INFINITY)).fold(f64::INFINITY, f64::min);
    let mut floor = f64::INFINITY;
    for lvl in red.levels.iter().take(red.p) {
        let (_, eig) = linalg::normal_eig(&lvl.t, 1e-8)?;
        for v in eig.values.iter().filter(|v| v.abs() > 1e-8) {
            floor = floor.min(0.5 * v.abs());
        }
    }
    Ok(SuiteRow {
        id: member.id,
        dim: pair.dim(),
        matches,
        max_match_ratio,
        max_commutation: report.rows.iter().map(|r| r.commutation).fold(0.0, f64::max),
        e_slope: report.e_slope().unwrap_or(f64::NAN),
        e_monotone: !report.e_non_monotone,
        b1_variation: if b1_min > 0.0 { b1_max / b1_min - 1.0 } else { f64::INFINITY },
        min_mu_b2,
        b2_floor: if floor.is_finite() { floor } else { 0.0 },
        degenerate: report.rows.iter().any(|r| r.degenerate),
    })
}
