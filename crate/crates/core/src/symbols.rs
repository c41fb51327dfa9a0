//! Constant-coefficient operator symbols, per-mode pencils, the limit
//! projection `ℙ` with its operator `T_lim`, and well-prepared initial data.

use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::grid::{GridSpec, SpectralState};
use crate::linalg::{self, Adjointness, CMatrix, LinalgError, DEFAULT_ADJ_TOL};
use crate::reduction::{reduce, ReductionError, ReductionOutput, SymbolPair};

#[derive(Debug, Error)]
pub enum SymbolError {
    #[error("symbol is not skew-adjoint at k = {k:?} (deviation {deviation:.3e})")]
    SymbolNotSkew { k: Vec<i64>, deviation: f64 },
    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch { what: String, expected: usize, got: usize },
    #[error("invalid scaling regime: {0}")]
    InvalidRegime(String),
    #[error("well-prepared chain has no solution at step {j}, mode {k:?} (relative residual {residual:.3e})")]
    ChainUnsolvable { j: usize, k: Vec<i64>, residual: f64 },
    #[error("reduction failed at mode {k:?}: {source}")]
    Reduction { k: Vec<i64>, source: ReductionError },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("symbol file {path}: {message}")]
    File { path: String, message: String },
}

pub type CustomSymbol = Arc<dyn Fn(&[i64]) -> CMatrix + Send + Sync>;

/// Fourier symbol `Ŝ(k) = Z + i Σ_j k_j S_j` of an antisymmetric operator of
/// order at most one, or an arbitrary user-supplied multiplier.
#[derive(Clone)]
pub struct OperatorSymbol {
    pub n: usize,
    pub d: usize,
    /// Zero-order part, skew-adjoint. Complex entries are allowed: an
    /// imaginary symmetric part is a valid skew multiplier.
    pub zero_order: CMatrix,
    /// Real symmetric coefficient of `∂_{x_j}` for each axis.
    pub first_order: Vec<Array2<f64>>,
    pub custom: Option<CustomSymbol>,
}

impl std::fmt::Debug for OperatorSymbol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OperatorSymbol")
            .field("n", &self.n)
            .field("d", &self.d)
            .field("zero_order", &self.zero_order)
            .field("first_order", &self.first_order)
            .field("custom", &self.custom.is_some())
            .finish()
    }
}

fn symmetric_deviation(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            dev = dev.max((m[[i, j]] - m[[j, i]]).abs());
        }
    }
    dev
}

impl OperatorSymbol {
    pub fn new(zero_order: CMatrix, first_order: Vec<Array2<f64>>) -> Result<Self, SymbolError> {
        let n = zero_order.nrows();
        if zero_order.ncols() != n {
            return Err(SymbolError::ShapeMismatch { what: "zero-order columns".into(), expected: n, got: zero_order.ncols() });
        }
        let dev = linalg::skew_adjoint_deviation(&zero_order);
        if dev > DEFAULT_ADJ_TOL * linalg::max_abs(&zero_order).max(1.0) {
            return Err(SymbolError::SymbolNotSkew { k: vec![], deviation: dev });
        }
        for s in &first_order {
            if s.dim() != (n, n) {
                return Err(SymbolError::ShapeMismatch { what: "first-order matrix size".into(), expected: n, got: s.nrows() });
            }
            let dev = symmetric_deviation(s);
            if dev > DEFAULT_ADJ_TOL * s.iter().fold(1.0f64, |m, v| m.max(v.abs())) {
                return Err(SymbolError::SymbolNotSkew { k: vec![], deviation: dev });
            }
        }
        let d = first_order.len();
        Ok(Self { n, d, zero_order, first_order, custom: None })
    }

    /// Purely differential symbol `i Σ k_j S_j`.
    pub fn differential(first_order: Vec<Array2<f64>>) -> Result<Self, SymbolError> {
        let n = first_order.first().map(|s| s.nrows()).unwrap_or(0);
        Self::new(linalg::zeros(n), first_order)
    }

    /// Constant multiplier (same matrix at every wavevector).
    pub fn multiplier(zero_order: CMatrix, d: usize) -> Result<Self, SymbolError> {
        let n = zero_order.nrows();
        Self::new(zero_order, vec![Array2::zeros((n, n)); d])
    }

    pub fn zero(n: usize, d: usize) -> Self {
        Self { n, d, zero_order: linalg::zeros(n), first_order: vec![Array2::zeros((n, n)); d], custom: None }
    }

    /// Arbitrary multiplier; skew-adjointness is checked at every evaluated mode.
    pub fn custom(n: usize, d: usize, f: CustomSymbol) -> Self {
        let mut s = Self::zero(n, d);
        s.custom = Some(f);
        s
    }

    pub fn is_zero(&self) -> bool {
        self.custom.is_none()
            && self.zero_order.iter().all(|z| *z == Complex64::new(0.0, 0.0))
            && self.first_order.iter().all(|s| s.iter().all(|&v| v == 0.0))
    }

    /// Evaluate `Ŝ(k)` and check skew-adjointness.
    pub fn eval(&self, k: &[i64]) -> Result<CMatrix, SymbolError> {
        if k.len() != self.d {
            return Err(SymbolError::ShapeMismatch { what: "wavevector length".into(), expected: self.d, got: k.len() });
        }
        let out = match &self.custom {
            Some(f) => {
                let m = f(k);
                if m.dim() != (self.n, self.n) {
                    return Err(SymbolError::ShapeMismatch { what: "custom symbol size".into(), expected: self.n, got: m.nrows() });
                }
                m
            }
            None => {
                let mut m = self.zero_order.clone();
                for (s, &kj) in self.first_order.iter().zip(k) {
                    if kj == 0 {
                        continue;
                    }
                    m.zip_mut_with(s, |z, &v| *z += Complex64::new(0.0, kj as f64 * v));
                }
                m
            }
        };
        let dev = linalg::skew_adjoint_deviation(&out);
        if dev > DEFAULT_ADJ_TOL * linalg::max_abs(&out).max(1.0) {
            return Err(SymbolError::SymbolNotSkew { k: k.to_vec(), deviation: dev });
        }
        Ok(out)
    }
}

/// Relation between the two small parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScalingRegime {
    /// `δ / ε^{1+1/s} → C`.
    RateMatch { s: u32, c: f64 },
    /// `ε^{1+1/s} ≪ δ ≪ ε^{1+1/(s+1)}`.
    RateBetween { s: u32 },
}

impl ScalingRegime {
    pub fn validate(&self) -> Result<(), SymbolError> {
        match *self {
            ScalingRegime::RateMatch { s, c } if s >= 1 && c > 0.0 && c.is_finite() => Ok(()),
            ScalingRegime::RateBetween { s } if s >= 1 => Ok(()),
            other => Err(SymbolError::InvalidRegime(format!("{other:?}"))),
        }
    }

    /// Reduction order: `s + 1` for matched rates, `s + 2` in between.
    pub fn p(&self) -> usize {
        match *self {
            ScalingRegime::RateMatch { s, .. } => s as usize + 1,
            ScalingRegime::RateBetween { s } => s as usize + 2,
        }
    }

    /// Factor multiplying `T^(p,p)` in the limit operator, `None` when the limit operator vanishes.
    pub fn limit_factor(&self) -> Option<f64> {
        match *self {
            ScalingRegime::RateMatch { s, c } => Some(c.powi(s as i32)),
            ScalingRegime::RateBetween { .. } => None,
        }
    }
}

/// `(L̂(k), M̂(k))` as a skew pencil.
pub fn mode_pair(l: &OperatorSymbol, m: &OperatorSymbol, k: &[i64]) -> Result<SymbolPair, SymbolError> {
    if l.n != m.n {
        return Err(SymbolError::ShapeMismatch { what: "component count of M".into(), expected: l.n, got: m.n });
    }
    let t00 = l.eval(k)?;
    let t01 = m.eval(k)?;
    SymbolPair::new(t00, t01, Adjointness::SkewAdjoint).map_err(|source| SymbolError::Reduction { k: k.to_vec(), source })
}

#[derive(Clone, Debug)]
pub struct ModeLimit {
    pub p_hat: CMatrix,
    pub tlim_hat: CMatrix,
}

/// Limit projection and limit operator at one wavevector.
pub fn limit_projector(
    l: &OperatorSymbol,
    m: &OperatorSymbol,
    regime: ScalingRegime,
    k: &[i64],
    tau_rank: f64,
) -> Result<ModeLimit, SymbolError> {
    limit_with_reduction(l, m, regime, k, tau_rank).map(|(lim, _)| lim)
}

/// As [`limit_projector`], also returning the full hierarchy.
pub fn limit_with_reduction(
    l: &OperatorSymbol,
    m: &OperatorSymbol,
    regime: ScalingRegime,
    k: &[i64],
    tau_rank: f64,
) -> Result<(ModeLimit, ReductionOutput), SymbolError> {
    regime.validate()?;
    let pair = mode_pair(l, m, k)?;
    let red = reduce(&pair, regime.p(), tau_rank).map_err(|source| SymbolError::Reduction { k: k.to_vec(), source })?;
    let p_hat = red.p0_limit.clone();
    let tlim_hat = match regime.limit_factor() {
        Some(f) => {
            let t = p_hat.dot(&red.tpp).dot(&p_hat).mapv(|z| z * f);
            linalg::adjoint_part(&t, Adjointness::SkewAdjoint)
        }
        None => linalg::zeros(l.n),
    };
    Ok((ModeLimit { p_hat, tlim_hat }, red))
}

/// `(P̂(k), T̂_lim(k))` for every mode of a grid.
#[derive(Clone, Debug)]
pub struct LimitTable {
    pub grid: GridSpec,
    pub modes: Vec<ModeLimit>,
}

impl LimitTable {
    pub fn build(
        l: &OperatorSymbol,
        m: &OperatorSymbol,
        regime: ScalingRegime,
        grid: &GridSpec,
        tau_rank: f64,
    ) -> Result<Self, SymbolError> {
        let modes = (0..grid.num_points())
            .into_par_iter()
            .map(|i| limit_projector(l, m, regime, &grid.wavevector(i), tau_rank))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { grid: *grid, modes })
    }

    /// Apply `ℙ` mode by mode.
    pub fn project(&self, state: &SpectralState) -> SpectralState {
        let mut out = state.clone();
        for (i, lim) in self.modes.iter().enumerate() {
            let v = lim.p_hat.dot(&state.coeffs.column(i));
            out.coeffs.column_mut(i).assign(&v);
        }
        out
    }

    /// Apply `T_lim` mode by mode.
    pub fn apply_tlim(&self, state: &SpectralState) -> SpectralState {
        let mut out = state.clone();
        for (i, lim) in self.modes.iter().enumerate() {
            let v = lim.tlim_hat.dot(&state.coeffs.column(i));
            out.coeffs.column_mut(i).assign(&v);
        }
        out
    }

    /// `max_k ‖T̂_lim(k)‖` over the grid.
    pub fn max_tlim_norm(&self) -> f64 {
        self.modes.iter().map(|m| linalg::spectral_norm(&m.tlim_hat)).fold(0.0, f64::max)
    }
}

/// Apply a symbol mode by mode to a state.
pub fn apply_symbol(sym: &OperatorSymbol, grid: &GridSpec, state: &SpectralState) -> Result<SpectralState, SymbolError> {
    let mut out = state.clone();
    for i in 0..state.num_modes() {
        let s = sym.eval(&grid.wavevector(i))?;
        let v = s.dot(&state.coeffs.column(i));
        out.coeffs.column_mut(i).assign(&v);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
pub struct WellPrepOptions {
    pub tau_rank: f64,
    /// Accept `M̂ũ` in the range of `L̂` when the least-squares residual is at most this fraction of `‖M̂ũ‖`.
    pub range_tol: f64,
    /// Constant in the truncation conditions `δ^{j-1} <= c ε^j`.
    pub c_bound: f64,
}

impl Default for WellPrepOptions {
    fn default() -> Self {
        Self { tau_rank: linalg::DEFAULT_RANK_TOL, range_tol: 1e-8, c_bound: 1.0 }
    }
}

#[derive(Clone, Debug)]
pub struct WellPrepared {
    pub u0: SpectralState,
    /// `ũ_0, ..., ũ_m`.
    pub chain: Vec<SpectralState>,
    /// `(j, k)` pairs where the chain was cut short under a size condition.
    pub truncated: Vec<(usize, Vec<i64>)>,
}

fn bounded_term(delta: f64, eps: f64, j: usize, c: f64) -> bool {
    // δ^{j-1} <= c ε^j
    delta.powi(j as i32 - 1) <= c * eps.powi(j as i32) * (1.0 + 1e-12)
}

/// Build `u_0 = Σ_{j<=m} (δ/ε)^j ũ_j + δ U_0` with `ũ_0` the kernel part of
/// `seed` and `L̂ ũ_j = -M̂ ũ_{j-1}`.
#[allow(clippy::too_many_arguments)]
pub fn build_wellprepared(
    l: &OperatorSymbol,
    m: &OperatorSymbol,
    grid: &GridSpec,
    order: usize,
    seed: &SpectralState,
    delta: f64,
    eps: f64,
    correction: Option<&SpectralState>,
    opts: &WellPrepOptions,
) -> Result<WellPrepared, SymbolError> {
    let ncomp = l.n;
    if seed.components() != ncomp {
        return Err(SymbolError::ShapeMismatch { what: "seed components".into(), expected: ncomp, got: seed.components() });
    }
    // Mode-wise chains advance in lock step so that range tests can be taken
    // relative to the global size of the previous link, not only the local
    // coefficient (which may be pure rounding noise).
    let n_modes = grid.num_points();
    let ops = (0..n_modes)
        .into_par_iter()
        .map(|i| -> Result<(CMatrix, CMatrix, CMatrix), SymbolError> {
            let k = grid.wavevector(i);
            let lh = l.eval(&k)?;
            let mh = m.eval(&k)?;
            let pinv = linalg::pseudo_inverse(&lh, opts.tau_rank)?;
            Ok((lh, mh, pinv))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut chain_states = Vec::with_capacity(order + 1);
    let mut first = SpectralState::zeros(ncomp, grid);
    for (i, (lh, _, _)) in ops.iter().enumerate() {
        let pker = linalg::null_projection(lh, opts.tau_rank)?;
        first.coeffs.column_mut(i).assign(&pker.dot(&seed.coeffs.column(i)));
    }
    chain_states.push(first);
    let norm = |v: &Array1<Complex64>| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let mut truncated = Vec::new();
    for j in 1..=order + 1 {
        let prev = &chain_states[j - 1];
        let global = prev.l2_norm();
        let steps: Vec<(Array1<Complex64>, f64, f64)> = ops
            .par_iter()
            .enumerate()
            .map(|(i, (lh, mh, pinv))| {
                let r = mh.dot(&prev.coeffs.column(i));
                let x = pinv.dot(&r).mapv(|z| -z);
                let resid = if j <= order { norm(&(&lh.dot(&x) + &r)) } else { norm(&r) };
                let allowance = opts.range_tol * norm(&r).max(linalg::max_abs(mh) * global);
                (x, resid, allowance)
            })
            .collect();
        let mut next = SpectralState::zeros(ncomp, grid);
        for (i, (x, resid, allowance)) in steps.into_iter().enumerate() {
            if resid > allowance {
                if !bounded_term(delta, eps, j, opts.c_bound) {
                    let rel = resid / norm(&ops[i].1.dot(&prev.coeffs.column(i))).max(f64::MIN_POSITIVE);
                    return Err(SymbolError::ChainUnsolvable { j, k: grid.wavevector(i), residual: rel });
                }
                if j <= order {
                    truncated.push((j, grid.wavevector(i)));
                }
            }
            next.coeffs.column_mut(i).assign(&x);
        }
        if j <= order {
            chain_states.push(next);
        }
    }

    let mut u0 = SpectralState::zeros(ncomp, grid);
    let ratio = delta / eps;
    for (j, s) in chain_states.iter().enumerate() {
        u0.scaled_add(ratio.powi(j as i32), s);
    }
    if let Some(c) = correction {
        u0.scaled_add(delta, c);
    }
    Ok(WellPrepared { u0, chain: chain_states, truncated })
}

/// `‖(1/δ)𝓛u_0 + (1/ε)𝓜u_0‖_{H^{s0}}`.
pub fn wellprep_residual(
    u0: &SpectralState,
    l: &OperatorSymbol,
    m: &OperatorSymbol,
    grid: &GridSpec,
    delta: f64,
    eps: f64,
    s0: u32,
) -> Result<f64, SymbolError> {
    let parts = (0..grid.num_points())
        .into_par_iter()
        .map(|i| -> Result<f64, SymbolError> {
            let k = grid.wavevector(i);
            let op = l.eval(&k)?.mapv(|z| z / delta) + m.eval(&k)?.mapv(|z| z / eps);
            let v = op.dot(&u0.coeffs.column(i));
            Ok((1.0 + grid.ksq(i)).powi(s0 as i32) * v.iter().map(|z| z.norm_sqr()).sum::<f64>())
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(parts.iter().sum::<f64>().sqrt())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OperatorSection {
    #[serde(default)]
    zero_order: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    zero_order_im: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    first_order: Vec<Vec<Vec<f64>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SymbolFile {
    components: usize,
    dimension: usize,
    #[serde(rename = "L")]
    l: OperatorSection,
    #[serde(rename = "M")]
    m: OperatorSection,
}

fn square(rows: &[Vec<f64>], n: usize, what: &str) -> Result<Array2<f64>, String> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(format!("{what} must be {n}x{n}"));
    }
    Ok(Array2::from_shape_fn((n, n), |(i, j)| rows[i][j]))
}

fn operator_from_section(sec: &OperatorSection, n: usize, d: usize, name: &str) -> Result<OperatorSymbol, String> {
    let re = match &sec.zero_order {
        Some(r) => square(r, n, &format!("{name}.zero_order"))?,
        None => Array2::zeros((n, n)),
    };
    let im = match &sec.zero_order_im {
        Some(r) => square(r, n, &format!("{name}.zero_order_im"))?,
        None => Array2::zeros((n, n)),
    };
    if sec.first_order.len() != d && !(sec.first_order.is_empty()) {
        return Err(format!("{name}.first_order must list {d} matrices, found {}", sec.first_order.len()));
    }
    let mut first = Vec::with_capacity(d);
    for (j, m) in sec.first_order.iter().enumerate() {
        first.push(square(m, n, &format!("{name}.first_order[{j}]"))?);
    }
    if first.is_empty() {
        first = vec![Array2::zeros((n, n)); d];
    }
    let zero = Array2::from_shape_fn((n, n), |(i, j)| Complex64::new(re[[i, j]], im[[i, j]]));
    OperatorSymbol::new(zero, first).map_err(|e| format!("{name}: {e}"))
}

/// Parse a symbol file: component count, dimension, and for each
/// of `L` and `M` a skew zero-order part plus one symmetric matrix per axis.
pub fn parse_symbol_file(text: &str) -> Result<(OperatorSymbol, OperatorSymbol), String> {
    let file: SymbolFile = toml::from_str(text).map_err(|e| e.to_string())?;
    if file.components == 0 {
        return Err("components must be positive".into());
    }
    let l = operator_from_section(&file.l, file.components, file.dimension, "L")?;
    let m = operator_from_section(&file.m, file.components, file.dimension, "M")?;
    Ok((l, m))
}

pub fn load_symbol_file(path: &Path) -> Result<(OperatorSymbol, OperatorSymbol), SymbolError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SymbolError::File { path: path.display().to_string(), message: e.to_string() })?;
    parse_symbol_file(&text).map_err(|message| SymbolError::File { path: path.display().to_string(), message })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Transforms;
    use crate::linalg::{max_abs, max_abs_diff};
    use ndarray::array;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// `L = diag(∂_x, 0)`, `M = [[0, ∂_y], [∂_y, 0]]`.
    pub(crate) fn directional_symbols() -> (OperatorSymbol, OperatorSymbol) {
        let l = OperatorSymbol::differential(vec![array![[1.0, 0.0], [0.0, 0.0]], Array2::zeros((2, 2))]).unwrap();
        let m = OperatorSymbol::differential(vec![Array2::zeros((2, 2)), array![[0.0, 1.0], [1.0, 0.0]]]).unwrap();
        (l, m)
    }

    #[test]
    fn directional_pair_at_mode() {
        let (l, m) = directional_symbols();
        let pair = mode_pair(&l, &m, &[2, 3]).unwrap();
        assert_eq!(pair.t00, array![[c(0.0, 2.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]]);
        assert_eq!(pair.t01, array![[c(0.0, 0.0), c(0.0, 3.0)], [c(0.0, 3.0), c(0.0, 0.0)]]);
        let zero = mode_pair(&l, &m, &[0, 0]).unwrap();
        assert!(max_abs(&zero.t00) == 0.0 && max_abs(&zero.t01) == 0.0);
    }

    #[test]
    fn multiplier_symbols_are_constant() {
        let z = array![[c(0.0, 0.0), c(1.0, 0.0)], [c(-1.0, 0.0), c(0.0, 2.0)]];
        let s = OperatorSymbol::multiplier(z.clone(), 2).unwrap();
        for k in [[0, 0], [3, -1], [7, 7]] {
            assert_eq!(s.eval(&k).unwrap(), z);
        }
    }

    #[test]
    fn non_skew_symbols_rejected() {
        assert!(OperatorSymbol::multiplier(array![[c(1.0, 0.0)]], 1).is_err());
        assert!(OperatorSymbol::differential(vec![array![[0.0, 1.0], [0.0, 0.0]]]).is_err());
        let bad = OperatorSymbol::custom(1, 1, Arc::new(|k: &[i64]| array![[c(k[0] as f64, 0.0)]]));
        assert!(bad.eval(&[0]).is_ok());
        assert!(matches!(bad.eval(&[2]), Err(SymbolError::SymbolNotSkew { .. })));
    }

    #[test]
    fn limit_projector_on_directional_symbols() {
        let (l, m) = directional_symbols();
        let regime = ScalingRegime::RateMatch { s: 1, c: 1.0 };
        let lim = limit_projector(&l, &m, regime, &[2, 3], 1e-10).unwrap();
        assert!(max_abs_diff(&lim.p_hat, &array![[c(0.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]]) < 1e-12);
        assert!(max_abs_diff(&lim.tlim_hat, &array![[c(0.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.0, -4.5)]]) < 1e-10);
        let lim = limit_projector(&l, &m, regime, &[0, 3], 1e-10).unwrap();
        assert!(max_abs(&lim.p_hat) < 1e-12);
        let lim = limit_projector(&l, &m, regime, &[0, 0], 1e-10).unwrap();
        assert!(max_abs_diff(&lim.p_hat, &linalg::identity(2)) < 1e-14);
        assert!(max_abs(&lim.tlim_hat) == 0.0);
        let lim = limit_projector(&l, &m, ScalingRegime::RateBetween { s: 1 }, &[2, 3], 1e-10).unwrap();
        assert!(max_abs(&lim.tlim_hat) == 0.0);
    }

    #[test]
    fn regime_orders() {
        assert_eq!(ScalingRegime::RateMatch { s: 2, c: 0.5 }.p(), 3);
        assert_eq!(ScalingRegime::RateBetween { s: 1 }.p(), 3);
        assert_eq!(ScalingRegime::RateMatch { s: 2, c: 0.5 }.limit_factor(), Some(0.25));
        assert!(ScalingRegime::RateMatch { s: 0, c: 1.0 }.validate().is_err());
        assert!(ScalingRegime::RateMatch { s: 1, c: -1.0 }.validate().is_err());
    }

    fn potential_field(grid: &GridSpec, f: impl Fn(&[f64]) -> f64) -> SpectralState {
        let tr = Transforms::new(*grid);
        let v = tr.sample(f);
        tr.to_spectral(&Array2::from_shape_vec((1, grid.num_points()), v).unwrap()).unwrap()
    }

    /// Seed `(−f_y, f_x)` for a scalar potential `f`.
    fn rotated_gradient_seed(grid: &GridSpec, f: impl Fn(&[f64]) -> f64) -> SpectralState {
        let tr = Transforms::new(*grid);
        let fs = potential_field(grid, f);
        let fx = tr.derivative(&fs, 0);
        let fy = tr.derivative(&fs, 1);
        let mut seed = SpectralState::zeros(2, grid);
        seed.coeffs.row_mut(0).assign(&fy.coeffs.row(0).mapv(|z| -z));
        seed.coeffs.row_mut(1).assign(&fx.coeffs.row(0));
        seed
    }

    #[test]
    fn chain_reproduces_rotated_gradient_data() {
        let grid = GridSpec::new(2, 16).unwrap();
        let (l, m) = directional_symbols();
        let f = |x: &[f64]| x[0].cos() * (2.0 * x[1]).cos();
        let seed = rotated_gradient_seed(&grid, f);
        let eps: f64 = 0.05;
        let delta = eps * eps;
        let wp = build_wellprepared(&l, &m, &grid, 1, &seed, delta, eps, None, &WellPrepOptions::default()).unwrap();
        // u0 = (−ε f_y, f_x)
        let mut want = seed.clone();
        want.coeffs.row_mut(0).mapv_inplace(|z| z * eps);
        assert!(wp.u0.max_abs_diff(&want) < 1e-15);
        assert!(wp.truncated.is_empty());
        assert!(wp.u0.hermitian_defect(&grid) < 1e-15);
    }

    #[test]
    fn chain_fails_when_term_is_unbounded() {
        let grid = GridSpec::new(2, 8).unwrap();
        let (l, m) = directional_symbols();
        let seed = rotated_gradient_seed(&grid, |x| x[0].cos() * (2.0 * x[1]).cos());
        // m = 0: closing needs M̂ũ_0 = 0 or δ^0 <= c ε, false for ε < 1
        let err = build_wellprepared(&l, &m, &grid, 0, &seed, 0.0025, 0.05, None, &WellPrepOptions::default());
        assert!(matches!(err, Err(SymbolError::ChainUnsolvable { j: 1, .. })));
    }

    #[test]
    fn residual_of_kernel_data_vanishes_and_bad_data_scale_like_inverse_delta() {
        let grid = GridSpec::new(2, 8).unwrap();
        let (l, m) = directional_symbols();
        // constant state is in both kernels
        let mut u = SpectralState::zeros(2, &grid);
        u.coeffs[[0, 0]] = c(1.0, 0.0);
        u.coeffs[[1, 0]] = c(-2.0, 0.0);
        assert_eq!(wellprep_residual(&u, &l, &m, &grid, 1e-4, 1e-2, 2).unwrap(), 0.0);

        let bad = potential_field(&grid, |x| x[0].sin());
        let mut b = SpectralState::zeros(2, &grid);
        b.coeffs.row_mut(0).assign(&bad.coeffs.row(0));
        let r1 = wellprep_residual(&b, &l, &m, &grid, 1e-2, 1e-1, 2).unwrap();
        let r2 = wellprep_residual(&b, &l, &m, &grid, 1e-3, 1e-1, 2).unwrap();
        assert!((r2 / r1 - 10.0).abs() < 1e-9);
    }

    #[test]
    fn residual_bounded_for_rotated_gradient_data() {
        let grid = GridSpec::new(2, 16).unwrap();
        let (l, m) = directional_symbols();
        let seed = rotated_gradient_seed(&grid, |x| x[0].cos() * x[1].cos());
        let vals: Vec<f64> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&eps: &f64| {
                let wp = build_wellprepared(&l, &m, &grid, 1, &seed, eps * eps, eps, None, &WellPrepOptions::default()).unwrap();
                wellprep_residual(&wp.u0, &l, &m, &grid, eps * eps, eps, 2).unwrap()
            })
            .collect();
        let (lo, hi) = vals.iter().fold((f64::MAX, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(hi <= 2.0 * lo, "{vals:?}");
    }

    #[test]
    fn symbol_file_roundtrip_and_validation() {
        let text = r#"
components = 2
dimension = 2
[L]
first_order = [ [[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]] ]
[M]
first_order = [ [[0.0, 0.0], [0.0, 0.0]], [[0.0, 1.0], [1.0, 0.0]] ]
"#;
        let (l, m) = parse_symbol_file(text).unwrap();
        let (l2, m2) = directional_symbols();
        assert_eq!(l.eval(&[2, 3]).unwrap(), l2.eval(&[2, 3]).unwrap());
        assert_eq!(m.eval(&[2, 3]).unwrap(), m2.eval(&[2, 3]).unwrap());

        let skewless = text.replace("[[0.0, 1.0], [1.0, 0.0]]", "[[0.0, 1.0], [0.0, 0.0]]");
        assert!(parse_symbol_file(&skewless).is_err());
        let wrong_count = "components = 1\ndimension = 2\n[L]\nfirst_order = [[[1.0]]]\n[M]\n";
        assert!(parse_symbol_file(wrong_count).is_err());
        let zero_im = "components = 1\ndimension = 1\n[L]\nzero_order_im = [[2.0]]\n[M]\n";
        let (l, _) = parse_symbol_file(zero_im).unwrap();
        assert_eq!(l.eval(&[5]).unwrap(), array![[c(0.0, 2.0)]]);
    }
}
