//! Small dense complex linear algebra for per-mode operators.
//!
//! Everything here works on the little `n x n` matrices that show up at a
//! single Fourier mode (n is rarely above a dozen), so the algorithms favour
//! accuracy and determinism over asymptotic speed: a cyclic Jacobi eigensolver
//! for self-adjoint matrices, eigenbasis pseudo-inverses and kernel
//! projections for normal (self- or skew-adjoint) matrices, and a Padé matrix
//! exponential for the rare non-normal generator.
//!
//! The Jacobi solver is generic over the real scalar so that the same code
//! runs in `f64` and in double-double precision ([`twofloat::TwoFloat`]).

use ndarray::Array2;
use num_complex::{Complex, Complex64};
use num_traits::{Float, One, Zero};
use thiserror::Error;

pub type CMatrix = Array2<Complex64>;

/// Default tolerance for adjointness checks, relative to `max(1, max|a_ij|)`.
pub const DEFAULT_ADJ_TOL: f64 = 1e-10;
/// Default relative rank tolerance: eigenvalues with `|λ| <= tol * max|λ|` count as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

const MAX_SWEEPS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not self-adjoint (max |A* - A| = {deviation:.3e})")]
    NotSelfAdjoint { deviation: f64 },
    #[error("matrix is neither self- nor skew-adjoint (deviations {self_dev:.3e}, {skew_dev:.3e})")]
    NotNormal { self_dev: f64, skew_dev: f64 },
    #[error("Jacobi eigensolver did not converge within {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("matrix is singular to working precision")]
    Singular,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Adjointness {
    SelfAdjoint,
    SkewAdjoint,
}

pub fn identity(n: usize) -> CMatrix {
    Array2::from_shape_fn((n, n), |(i, j)| if i == j { Complex64::one() } else { Complex64::zero() })
}

pub fn zeros(n: usize) -> CMatrix {
    Array2::zeros((n, n))
}

pub fn adjoint(a: &CMatrix) -> CMatrix {
    a.t().mapv(|z| z.conj())
}

pub fn max_abs(a: &CMatrix) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}

/// Max-entry distance between two matrices of equal shape.
pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).norm()))
}

pub fn frobenius(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn self_adjoint_deviation(a: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            dev = dev.max((a[[j, i]].conj() - a[[i, j]]).norm());
        }
    }
    dev
}

pub fn skew_adjoint_deviation(a: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            dev = dev.max((a[[j, i]].conj() + a[[i, j]]).norm());
        }
    }
    dev
}

fn adj_bound(a: &CMatrix, tol: f64) -> f64 {
    tol * max_abs(a).max(1.0)
}

pub fn is_adjoint_kind(a: &CMatrix, kind: Adjointness, tol: f64) -> bool {
    let dev = match kind {
        Adjointness::SelfAdjoint => self_adjoint_deviation(a),
        Adjointness::SkewAdjoint => skew_adjoint_deviation(a),
    };
    dev <= adj_bound(a, tol)
}

fn ensure_square(a: &CMatrix) -> Result<usize, LinalgError> {
    let (rows, cols) = a.dim();
    if rows != cols {
        return Err(LinalgError::NotSquare { rows, cols });
    }
    Ok(rows)
}

/// Decide whether `a` is self-adjoint or skew-adjoint. The zero matrix is
/// reported as self-adjoint.
pub fn classify(a: &CMatrix, tol: f64) -> Result<Adjointness, LinalgError> {
    ensure_square(a)?;
    let bound = adj_bound(a, tol);
    let self_dev = self_adjoint_deviation(a);
    if self_dev <= bound {
        return Ok(Adjointness::SelfAdjoint);
    }
    let skew_dev = skew_adjoint_deviation(a);
    if skew_dev <= bound {
        return Ok(Adjointness::SkewAdjoint);
    }
    Err(LinalgError::NotNormal { self_dev, skew_dev })
}

/// Exact self-adjoint (`kind = SelfAdjoint`) or skew-adjoint part of `a`.
pub fn adjoint_part(a: &CMatrix, kind: Adjointness) -> CMatrix {
    let at = adjoint(a);
    match kind {
        Adjointness::SelfAdjoint => (a + &at).mapv(|z| z * 0.5),
        Adjointness::SkewAdjoint => (a - &at).mapv(|z| z * 0.5),
    }
}

/// Map a skew-adjoint matrix to the self-adjoint frame (`i·A`); identity on
/// self-adjoint input.
pub fn to_self_adjoint_frame(a: &CMatrix, kind: Adjointness) -> CMatrix {
    match kind {
        Adjointness::SelfAdjoint => a.clone(),
        Adjointness::SkewAdjoint => a.mapv(|z| z * Complex64::i()),
    }
}

pub fn matmul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.dot(b)
}

/// Product of a chain of matrices, left to right.
pub fn chain(factors: &[&CMatrix]) -> CMatrix {
    let mut it = factors.iter();
    let first = (*it.next().expect("empty matrix chain")).clone();
    it.fold(first, |acc, m| acc.dot(*m))
}

/// Eigendecomposition of a self-adjoint matrix: ascending real eigenvalues
/// and a unitary matrix whose columns are the eigenvectors.
#[derive(Clone, Debug)]
pub struct HermEig {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl HermEig {
    pub fn reconstruct(&self) -> CMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            for i in 0..n {
                scaled[[i, j]] *= self.values[j];
            }
        }
        scaled.dot(&adjoint(&self.vectors))
    }

    /// Orthogonal projection onto the span of the selected eigenvectors.
    pub fn projection_onto(&self, mut keep: impl FnMut(usize, f64) -> bool) -> CMatrix {
        let n = self.values.len();
        let mut p = zeros(n);
        for (j, &lam) in self.values.iter().enumerate() {
            if !keep(j, lam) {
                continue;
            }
            for r in 0..n {
                let vr = self.vectors[[r, j]];
                for c in 0..n {
                    p[[r, c]] += vr * self.vectors[[c, j]].conj();
                }
            }
        }
        p
    }

    pub fn max_abs_value(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Eigendecomposition of a self-adjoint matrix by cyclic Jacobi rotations.
///
/// `tol` is the adjointness tolerance; the input is symmetrised before the
/// sweeps start.
pub fn herm_eig(a: &CMatrix, tol: f64) -> Result<HermEig, LinalgError> {
    ensure_square(a)?;
    let deviation = self_adjoint_deviation(a);
    if deviation > adj_bound(a, tol) {
        return Err(LinalgError::NotSelfAdjoint { deviation });
    }
    let h = adjoint_part(a, Adjointness::SelfAdjoint);
    let (values, vectors) = jacobi_eigh(h)?;
    Ok(HermEig { values, vectors })
}

/// Eigendecomposition of a normal (self- or skew-adjoint) matrix carried out
/// in the self-adjoint frame. For skew input the returned eigenvalues are
/// those of `i·A`, i.e. `A = -i V diag(λ) V*`.
pub fn normal_eig(a: &CMatrix, tol: f64) -> Result<(Adjointness, HermEig), LinalgError> {
    let kind = classify(a, tol)?;
    let h = adjoint_part(&to_self_adjoint_frame(a, kind), Adjointness::SelfAdjoint);
    let (values, vectors) = jacobi_eigh(h)?;
    Ok((kind, HermEig { values, vectors }))
}

fn zero_cutoff(eig: &HermEig, rank_tol: f64, floor_scale: f64) -> f64 {
    rank_tol * eig.max_abs_value().max(floor_scale)
}

/// Moore–Penrose pseudo-inverse of a self- or skew-adjoint matrix, computed in
/// its eigenbasis. Eigenvalues with `|λ| <= rank_tol * max|λ|` are treated as zero.
pub fn pseudo_inverse(a: &CMatrix, rank_tol: f64) -> Result<CMatrix, LinalgError> {
    pseudo_inverse_scaled(a, rank_tol, 0.0)
}

/// As [`pseudo_inverse`], but the zero cutoff is `rank_tol * max(max|λ|, floor_scale)`.
pub fn pseudo_inverse_scaled(a: &CMatrix, rank_tol: f64, floor_scale: f64) -> Result<CMatrix, LinalgError> {
    let n = ensure_square(a)?;
    let (kind, eig) = normal_eig(a, DEFAULT_ADJ_TOL)?;
    let cutoff = zero_cutoff(&eig, rank_tol, floor_scale);
    let mut out = zeros(n);
    if eig.max_abs_value() == 0.0 {
        return Ok(out);
    }
    for (j, &lam) in eig.values.iter().enumerate() {
        if lam.abs() <= cutoff {
            continue;
        }
        let inv = 1.0 / lam;
        for r in 0..n {
            let vr = eig.vectors[[r, j]] * inv;
            for c in 0..n {
                out[[r, c]] += vr * eig.vectors[[c, j]].conj();
            }
        }
    }
    // A = -iH  =>  A^+ = i H^+
    if kind == Adjointness::SkewAdjoint {
        out.mapv_inplace(|z| z * Complex64::i());
    }
    Ok(out)
}

/// Orthogonal projection onto the (numerical) kernel of a self- or
/// skew-adjoint matrix. The zero matrix has the identity as its projection.
pub fn null_projection(a: &CMatrix, rank_tol: f64) -> Result<CMatrix, LinalgError> {
    null_projection_scaled(a, rank_tol, 0.0)
}

/// As [`null_projection`], with the zero cutoff `rank_tol * max(max|λ|, floor_scale)`.
pub fn null_projection_scaled(a: &CMatrix, rank_tol: f64, floor_scale: f64) -> Result<CMatrix, LinalgError> {
    let n = ensure_square(a)?;
    let (_, eig) = normal_eig(a, DEFAULT_ADJ_TOL)?;
    if eig.max_abs_value() == 0.0 {
        return Ok(identity(n));
    }
    let cutoff = zero_cutoff(&eig, rank_tol, floor_scale);
    Ok(eig.projection_onto(|_, lam| lam.abs() <= cutoff))
}

/// Largest singular value.
pub fn spectral_norm(a: &CMatrix) -> f64 {
    let gram = adjoint(a).dot(a);
    match herm_eig(&gram, 1e-8) {
        Ok(eig) => eig.max_abs_value().max(0.0).sqrt(),
        Err(_) => frobenius(a),
    }
}

/// Numerical rank of an orthogonal projection (its rounded trace).
pub fn projection_rank(p: &CMatrix) -> usize {
    let tr: f64 = (0..p.nrows()).map(|i| p[[i, i]].re).sum();
    tr.round().max(0.0) as usize
}

/// `(‖P² − P‖_max, ‖P* − P‖_max)`.
pub fn projection_defects(p: &CMatrix) -> (f64, f64) {
    let p2 = p.dot(p);
    (max_abs_diff(&p2, p), self_adjoint_deviation(p))
}

/// Solve `A X = B` by Gaussian elimination with partial pivoting.
pub fn solve(a: &CMatrix, b: &CMatrix) -> Result<CMatrix, LinalgError> {
    let n = ensure_square(a)?;
    let mut m = a.clone();
    let mut x = b.clone();
    let scale = max_abs(a);
    for col in 0..n {
        let (piv, best) = (col..n)
            .map(|r| (r, m[[r, col]].norm()))
            .fold((col, -1.0), |acc, v| if v.1 > acc.1 { v } else { acc });
        if best <= f64::EPSILON * scale * n as f64 || best == 0.0 {
            return Err(LinalgError::Singular);
        }
        if piv != col {
            for c in 0..n {
                m.swap([piv, c], [col, c]);
            }
            for c in 0..x.ncols() {
                x.swap([piv, c], [col, c]);
            }
        }
        let d = m[[col, col]];
        for r in (col + 1)..n {
            let f = m[[r, col]] / d;
            if f == Complex64::zero() {
                continue;
            }
            for c in col..n {
                let v = m[[col, c]];
                m[[r, c]] -= f * v;
            }
            for c in 0..x.ncols() {
                let v = x[[col, c]];
                x[[r, c]] -= f * v;
            }
        }
    }
    for col in (0..n).rev() {
        let d = m[[col, col]];
        for c in 0..x.ncols() {
            let mut s = x[[col, c]];
            for k in (col + 1)..n {
                s -= m[[col, k]] * x[[k, c]];
            }
            x[[col, c]] = s / d;
        }
    }
    Ok(x)
}

pub fn inverse(a: &CMatrix) -> Result<CMatrix, LinalgError> {
    let n = ensure_square(a)?;
    solve(a, &identity(n))
}

fn norm1(a: &CMatrix) -> f64 {
    (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a[[i, j]].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a diagonal [6/6] Padé approximant.
pub fn expm(a: &CMatrix) -> Result<CMatrix, LinalgError> {
    let n = ensure_square(a)?;
    let nrm = norm1(a);
    let squarings = if nrm > 0.5 { (nrm / 0.5).log2().ceil() as i32 } else { 0 };
    let scale = 0.5f64.powi(squarings);
    let x = a.mapv(|z| z * scale);
    // Padé coefficients c_k = (2q-k)! q! / ((2q)! k! (q-k)!), q = 6
    let q = 6usize;
    let mut c = vec![1.0f64; q + 1];
    for k in 1..=q {
        c[k] = c[k - 1] * (q + 1 - k) as f64 / (k * (2 * q + 1 - k)) as f64;
    }
    let eye = identity(n);
    let mut num = eye.mapv(|z| z * c[0]);
    let mut den = eye.mapv(|z| z * c[0]);
    let mut pow = eye.clone();
    for (k, &ck) in c.iter().enumerate().skip(1) {
        pow = pow.dot(&x);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        num = num + pow.mapv(|z| z * ck);
        den = den + pow.mapv(|z| z * (ck * sign));
    }
    let mut e = solve(&den, &num)?;
    for _ in 0..squarings {
        e = e.dot(&e);
    }
    Ok(e)
}

/// Scalars the Jacobi solver runs in. Double-double needs its own unit
/// roundoff and a corrected quotient: `TwoFloat::EPSILON` is the smallest
/// positive normal, and `TwoFloat / TwoFloat` in twofloat 0.8 is only about
/// `1e-16` accurate because its reciprocal residual is formed without an FMA.
pub trait JacobiScalar: Float {
    /// Convergence threshold relative to the Frobenius norm.
    fn unit_roundoff() -> Self;

    fn quot(a: Self, b: Self) -> Self {
        a / b
    }
}

impl JacobiScalar for f64 {
    fn unit_roundoff() -> Self {
        f64::EPSILON
    }
}

impl JacobiScalar for twofloat::TwoFloat {
    fn unit_roundoff() -> Self {
        // a few ulps of the 106-bit significand
        twofloat::TwoFloat::from(2f64.powi(-100))
    }

    fn quot(a: Self, b: Self) -> Self {
        dd_div(a, b)
    }
}

/// `a / b` in double-double with one residual correction, accurate to a
/// few units of `2^-104`.
pub fn dd_div(a: twofloat::TwoFloat, b: twofloat::TwoFloat) -> twofloat::TwoFloat {
    let q = a / b;
    let r = a - q * b;
    q + r / b.hi()
}

fn cquot<T: JacobiScalar>(z: Complex<T>, r: T) -> Complex<T> {
    Complex::new(T::quot(z.re, r), T::quot(z.im, r))
}

/// Cyclic Jacobi eigensolver for a Hermitian matrix with entries in
/// `Complex<T>`. Returns ascending eigenvalues and unitary eigenvectors with
/// deterministic ordering and phase: ties in the eigenvalue are broken by the
/// index of the first significant eigenvector entry, and that entry is made
/// real and positive.
pub fn jacobi_eigh<T: JacobiScalar>(a: Array2<Complex<T>>) -> Result<(Vec<T>, Array2<Complex<T>>), LinalgError> {
    let n = a.nrows();
    let mut a = a;
    let mut v: Array2<Complex<T>> =
        Array2::from_shape_fn((n, n), |(i, j)| if i == j { Complex::one() } else { Complex::zero() });
    let two = T::one() + T::one();
    let half = T::quot(T::one(), two);
    let eps = T::unit_roundoff();
    let scale = a.iter().fold(T::zero(), |s, z| s + z.norm_sqr()).sqrt();

    if scale > T::zero() {
        let mut converged = false;
        for _sweep in 0..MAX_SWEEPS {
            let mut off = T::zero();
            for p in 0..n {
                for q in 0..n {
                    if p != q {
                        off = off + a[[p, q]].norm_sqr();
                    }
                }
            }
            if off.sqrt() <= eps * scale {
                converged = true;
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[[p, q]];
                    let r = apq.norm();
                    if r <= eps * eps * scale {
                        a[[p, q]] = Complex::zero();
                        a[[q, p]] = Complex::zero();
                        continue;
                    }
                    let phase = cquot(apq, r);
                    let app = a[[p, p]].re;
                    let aqq = a[[q, q]].re;
                    let theta = T::quot(aqq - app, two * r);
                    let t = if theta == T::zero() {
                        T::one()
                    } else {
                        let at = theta.abs();
                        let mag = if at > T::from(1e100).unwrap() {
                            T::quot(half, at)
                        } else {
                            T::quot(T::one(), at + (at * at + T::one()).sqrt())
                        };
                        if theta < T::zero() {
                            -mag
                        } else {
                            mag
                        }
                    };
                    let c = T::quot(T::one(), (t * t + T::one()).sqrt());
                    let s = t * c;
                    let cph = phase.conj();
                    // A <- A U,  U = diag(1, e^{-iφ}) · [[c, s], [-s, c]]
                    for i in 0..n {
                        let x = a[[i, p]];
                        let y = a[[i, q]];
                        a[[i, p]] = x.scale(c) - (y * cph).scale(s);
                        a[[i, q]] = x.scale(s) + (y * cph).scale(c);
                        let xv = v[[i, p]];
                        let yv = v[[i, q]];
                        v[[i, p]] = xv.scale(c) - (yv * cph).scale(s);
                        v[[i, q]] = xv.scale(s) + (yv * cph).scale(c);
                    }
                    // A <- U* A
                    for j in 0..n {
                        let x = a[[p, j]];
                        let y = a[[q, j]];
                        a[[p, j]] = x.scale(c) - (y * phase).scale(s);
                        a[[q, j]] = x.scale(s) + (y * phase).scale(c);
                    }
                    a[[p, q]] = Complex::zero();
                    a[[q, p]] = Complex::zero();
                    a[[p, p]] = Complex::new(app - t * r, T::zero());
                    a[[q, q]] = Complex::new(aqq + t * r, T::zero());
                }
            }
        }
        if !converged {
            return Err(LinalgError::NoConvergence { sweeps: MAX_SWEEPS });
        }
    }

    let values: Vec<T> = (0..n).map(|i| a[[i, i]].re).collect();
    Ok(sort_and_normalise(values, v))
}

fn first_significant<T: Float>(v: &Array2<Complex<T>>, col: usize) -> usize {
    let thresh = T::from(1e-6).unwrap();
    (0..v.nrows()).find(|&i| v[[i, col]].norm() > thresh).unwrap_or(0)
}

fn sort_and_normalise<T: JacobiScalar>(values: Vec<T>, vectors: Array2<Complex<T>>) -> (Vec<T>, Array2<Complex<T>>) {
    let n = values.len();
    let spread = values.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let tie = spread * T::from(1e-12).unwrap();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap_or(std::cmp::Ordering::Equal));
    // within runs of (numerically) equal eigenvalues, order by leading entry
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] - values[order[end - 1]] <= tie {
            end += 1;
        }
        if end - start > 1 {
            order[start..end].sort_by(|&i, &j| {
                let fi = first_significant(&vectors, i);
                let fj = first_significant(&vectors, j);
                fi.cmp(&fj).then_with(|| {
                    let mi = vectors[[fi, i]].norm();
                    let mj = vectors[[fj, j]].norm();
                    mj.partial_cmp(&mi).unwrap_or(std::cmp::Ordering::Equal)
                })
            });
        }
        start = end;
    }

    let mut sorted_vals = Vec::with_capacity(n);
    let mut sorted_vecs = Array2::from_elem((n, n), Complex::zero());
    for (dst, &src) in order.iter().enumerate() {
        sorted_vals.push(values[src]);
        let lead = first_significant(&vectors, src);
        let z = vectors[[lead, src]];
        let r = z.norm();
        let rot = if r > T::zero() { cquot(z.conj(), r) } else { Complex::one() };
        for i in 0..n {
            sorted_vecs[[i, dst]] = vectors[[i, src]] * rot;
        }
    }
    (sorted_vals, sorted_vecs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn diag(entries: &[Complex64]) -> CMatrix {
        let n = entries.len();
        Array2::from_shape_fn((n, n), |(i, j)| if i == j { entries[i] } else { Complex64::zero() })
    }

    pub(crate) fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
        let mut a = zeros(n);
        for i in 0..n {
            a[[i, i]] = c(rng.random_range(-1.0..1.0), 0.0);
            for j in (i + 1)..n {
                let z = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                a[[i, j]] = z;
                a[[j, i]] = z.conj();
            }
        }
        a
    }

    #[test]
    fn diagonal_input_sorts_ascending_with_permutation_vectors() {
        let a = diag(&[c(3.0, 0.0), c(-1.0, 0.0), c(0.0, 0.0)]);
        let eig = herm_eig(&a, DEFAULT_ADJ_TOL).unwrap();
        assert_eq!(eig.values, vec![-1.0, 0.0, 3.0]);
        let expected_cols = [1usize, 2, 0];
        for (j, &row) in expected_cols.iter().enumerate() {
            for i in 0..3 {
                let want = if i == row { 1.0 } else { 0.0 };
                assert!((eig.vectors[[i, j]] - c(want, 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn rotated_directional_symbol_has_expected_spectrum() {
        // i * [[2i, 0], [0, 0]]
        let t00 = diag(&[c(0.0, 2.0), c(0.0, 0.0)]);
        let h = to_self_adjoint_frame(&t00, Adjointness::SkewAdjoint);
        let eig = herm_eig(&h, DEFAULT_ADJ_TOL).unwrap();
        assert!((eig.values[0] + 2.0).abs() < 1e-15);
        assert!(eig.values[1].abs() < 1e-15);
    }

    #[test]
    fn random_reconstruction_and_unitarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=16 {
            let a = random_hermitian(&mut rng, n);
            let eig = herm_eig(&a, DEFAULT_ADJ_TOL).unwrap();
            let err = max_abs_diff(&eig.reconstruct(), &a);
            assert!(err <= 1e-12 * spectral_norm(&a).max(1.0), "n={n} err={err:e}");
            let vtv = adjoint(&eig.vectors).dot(&eig.vectors);
            assert!(max_abs_diff(&vtv, &identity(n)) < 1e-12);
            assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn rejects_non_hermitian_input() {
        let a = Array2::from_shape_vec((2, 2), vec![c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert!(matches!(herm_eig(&a, DEFAULT_ADJ_TOL), Err(LinalgError::NotSelfAdjoint { .. })));
        assert!(matches!(pseudo_inverse(&a, DEFAULT_RANK_TOL), Err(LinalgError::NotNormal { .. })));
        assert!(matches!(null_projection(&a, DEFAULT_RANK_TOL), Err(LinalgError::NotNormal { .. })));
    }

    #[test]
    fn pseudo_inverse_of_invertible_skew_diagonal() {
        let a = diag(&[c(0.0, 2.0), c(0.0, -1.0)]);
        let p = pseudo_inverse(&a, DEFAULT_RANK_TOL).unwrap();
        let want = diag(&[c(0.0, -0.5), c(0.0, 1.0)]);
        assert!(max_abs_diff(&p, &want) < 1e-15);
    }

    #[test]
    fn pseudo_inverse_of_rank_one_skew() {
        let a = diag(&[c(0.0, 2.0), c(0.0, 0.0)]);
        let p = pseudo_inverse(&a, DEFAULT_RANK_TOL).unwrap();
        assert!(max_abs_diff(&p, &diag(&[c(0.0, -0.5), c(0.0, 0.0)])) < 1e-15);
    }

    #[test]
    fn zero_matrix_edge_cases() {
        let z = zeros(3);
        assert_eq!(pseudo_inverse(&z, DEFAULT_RANK_TOL).unwrap(), z);
        assert_eq!(null_projection(&z, DEFAULT_RANK_TOL).unwrap(), identity(3));
    }

    #[test]
    fn null_projection_of_directional_symbol() {
        let a = diag(&[c(0.0, 2.0), c(0.0, 0.0)]);
        let p = null_projection(&a, DEFAULT_RANK_TOL).unwrap();
        assert!(max_abs_diff(&p, &diag(&[c(0.0, 0.0), c(1.0, 0.0)])) < 1e-15);
    }

    /// Random normal matrix of prescribed rank built in a random unitary basis.
    fn random_normal_with_kernel(rng: &mut ChaCha8Rng, n: usize, rank: usize, kind: Adjointness) -> CMatrix {
        let h = random_hermitian(rng, n);
        let q = herm_eig(&h, DEFAULT_ADJ_TOL).unwrap().vectors;
        let mut d = zeros(n);
        for i in 0..rank {
            let mag = rng.random_range(0.2..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            d[[i, i]] = match kind {
                Adjointness::SelfAdjoint => c(mag, 0.0),
                Adjointness::SkewAdjoint => c(0.0, mag),
            };
        }
        q.dot(&d).dot(&adjoint(&q))
    }

    /// Independent kernel oracle: Gram–Schmidt on the columns of `I - A^+ A`
    /// and comparison of the resulting orthonormal basis' projector.
    fn gram_schmidt_projector(cols: &CMatrix, tol: f64) -> CMatrix {
        let n = cols.nrows();
        let mut basis: Vec<Vec<Complex64>> = Vec::new();
        for j in 0..cols.ncols() {
            let mut v: Vec<Complex64> = (0..n).map(|i| cols[[i, j]]).collect();
            for _ in 0..2 {
                for b in &basis {
                    let dot: Complex64 = b.iter().zip(&v).map(|(x, y)| x.conj() * y).sum();
                    for (vi, bi) in v.iter_mut().zip(b) {
                        *vi -= dot * bi;
                    }
                }
            }
            let nrm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if nrm > tol {
                basis.push(v.into_iter().map(|z| z / nrm).collect());
            }
        }
        let mut p = zeros(n);
        for b in &basis {
            for r in 0..n {
                for cc in 0..n {
                    p[[r, cc]] += b[r] * b[cc].conj();
                }
            }
        }
        p
    }

    #[test]
    fn random_kernel_matches_gram_schmidt_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..40 {
            let n = 2 + trial % 7;
            let rank = rng.random_range(0..=n);
            let kind = if trial % 2 == 0 { Adjointness::SkewAdjoint } else { Adjointness::SelfAdjoint };
            let a = random_normal_with_kernel(&mut rng, n, rank, kind);
            let p = null_projection(&a, 1e-8).unwrap();
            assert_eq!(projection_rank(&p), n - rank);
            // oracle: kernel vectors are the columns of I - A^+A, orthonormalised
            let apinv = pseudo_inverse(&a, 1e-8).unwrap();
            let resid = identity(n) - apinv.dot(&a);
            let oracle = gram_schmidt_projector(&resid, 1e-6);
            assert!(max_abs_diff(&p, &oracle) < 1e-9, "trial {trial}");
            let (idem, sym) = projection_defects(&p);
            assert!(idem < 1e-10 && sym < 1e-10);
            assert!(max_abs(&a.dot(&p)) <= 1e-10 * max_abs(&a).max(1.0));
        }
    }

    #[test]
    fn penrose_identities_hold_on_random_normal_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..40 {
            let n = 1 + trial % 8;
            let rank = rng.random_range(0..=n);
            let kind = if trial % 3 == 0 { Adjointness::SelfAdjoint } else { Adjointness::SkewAdjoint };
            let a = random_normal_with_kernel(&mut rng, n, rank, kind);
            let m = pseudo_inverse(&a, 1e-8).unwrap();
            assert!(max_abs_diff(&a.dot(&m).dot(&a), &a) < 1e-10);
            assert!(max_abs_diff(&m.dot(&a).dot(&m), &m) < 1e-10);
            // (A^+)^+ = A on range(A)
            let back = pseudo_inverse(&m, 1e-8).unwrap();
            assert!(max_abs_diff(&back, &a) < 1e-10);
        }
    }

    #[test]
    fn extended_precision_solver_agrees_with_f64() {
        use twofloat::TwoFloat;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_hermitian(&mut rng, 6);
        let a_dd = a.mapv(|z| Complex::new(TwoFloat::from(z.re), TwoFloat::from(z.im)));
        let (vals_dd, _) = jacobi_eigh(a_dd).unwrap();
        let eig = herm_eig(&a, DEFAULT_ADJ_TOL).unwrap();
        for (x, y) in vals_dd.iter().zip(&eig.values) {
            assert!((f64::from(*x) - y).abs() < 1e-13);
        }
    }

    #[test]
    fn expm_matches_eigen_route_and_handles_nilpotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = random_hermitian(&mut rng, 5);
        let skew = h.mapv(|z| z * c(0.0, -3.0));
        let e = expm(&skew).unwrap();
        let eig = herm_eig(&h, DEFAULT_ADJ_TOL).unwrap();
        let mut want = zeros(5);
        for (j, &lam) in eig.values.iter().enumerate() {
            let ph = c(0.0, -3.0 * lam).exp();
            for r in 0..5 {
                for cc in 0..5 {
                    want[[r, cc]] += ph * eig.vectors[[r, j]] * eig.vectors[[cc, j]].conj();
                }
            }
        }
        assert!(max_abs_diff(&e, &want) < 1e-12);

        let nil = Array2::from_shape_vec((2, 2), vec![c(0.0, 0.0), c(2.5, 0.0), c(0.0, 0.0), c(0.0, 0.0)]).unwrap();
        let en = expm(&nil).unwrap();
        assert!(max_abs_diff(&en, &Array2::from_shape_vec((2, 2), vec![c(1.0, 0.0), c(2.5, 0.0), c(0.0, 0.0), c(1.0, 0.0)]).unwrap()) < 1e-14);
    }

    #[test]
    fn solve_recovers_known_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = Array2::from_shape_fn((5, 5), |_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let x = Array2::from_shape_fn((5, 2), |_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let b = a.dot(&x);
        assert!(max_abs_diff(&solve(&a, &b).unwrap(), &x) < 1e-12);
    }
}
