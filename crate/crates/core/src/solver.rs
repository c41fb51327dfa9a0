//! Spectral simulation of `A0(εu) u_t + Σ A_j(u) u_{x_j} + (1/δ)𝓛u + (1/ε)𝓜u = F`
//! on the torus, plus the norm instrumentation used to watch uniform bounds.
//!
//! Linear constant-coefficient systems are advanced with exact per-mode
//! propagators; everything else goes through a pseudo-spectral RK4 whose step
//! is limited by the fast scales.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{GridSpec, SpectralState, Transforms};
use crate::linalg::{self, CMatrix, LinalgError};
use crate::propagator::ExactPropagator;
use crate::symbols::{OperatorSymbol, SymbolError};

pub type PointRule = Arc<dyn Fn(&[f64]) -> Array2<f64> + Send + Sync>;
/// `G(t, x)`, one value per component.
pub type ForcingFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;
/// `H(t, x, u)` with `F = G + H u`.
pub type HRule = Arc<dyn Fn(f64, &[f64], &[f64]) -> Array2<f64> + Send + Sync>;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("A0 lost definiteness: minimum eigenvalue {min_eig:.3e} at node {node}")]
    A0Singular { min_eig: f64, node: usize },
    #[error("amplitude escaped: max |εu| = {max:.3e} exceeds b0 = {b0:.3e}")]
    AmplitudeEscape { max: f64, b0: f64 },
    #[error("time step collapsed to {dt:.3e}")]
    StepCollapse { dt: f64 },
    #[error("output spacing {spacing:.3e} too coarse for time derivatives (need <= {required:.3e} and {needed} samples)")]
    InsufficientSampling { spacing: f64, required: f64, needed: usize },
    #[error("unsupported system: {0}")]
    UnsupportedSystem(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Symbol(#[from] SymbolError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Matrix-valued coefficient of the state.
#[derive(Clone)]
pub enum Coefficient {
    Constant(Array2<f64>),
    /// `base + Σ_c v_c slopes[c]`.
    Affine { base: Array2<f64>, slopes: Vec<Array2<f64>> },
    Rule(PointRule),
}

impl std::fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coefficient::Constant(m) => f.debug_tuple("Constant").field(m).finish(),
            Coefficient::Affine { base, slopes } => {
                f.debug_struct("Affine").field("base", base).field("slopes", slopes).finish()
            }
            Coefficient::Rule(_) => f.write_str("Rule(..)"),
        }
    }
}

impl Coefficient {
    pub fn eval(&self, v: &[f64]) -> Array2<f64> {
        match self {
            Coefficient::Constant(m) => m.clone(),
            Coefficient::Affine { base, slopes } => {
                let mut out = base.clone();
                for (s, &vc) in slopes.iter().zip(v) {
                    if vc != 0.0 {
                        out.scaled_add(vc, s);
                    }
                }
                out
            }
            Coefficient::Rule(f) => f(v),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Coefficient::Constant(_))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Coefficient::Constant(m) if m.iter().all(|&x| x == 0.0))
    }

    /// `d/dt` of the coefficient along `v(t)` given `v'`: only for affine/constant.
    fn directional(&self, dv: &[f64]) -> Option<Array2<f64>> {
        match self {
            Coefficient::Constant(m) => Some(Array2::zeros(m.dim())),
            Coefficient::Affine { base, slopes } => {
                let mut out = Array2::zeros(base.dim());
                for (s, &d) in slopes.iter().zip(dv) {
                    if d != 0.0 {
                        out.scaled_add(d, s);
                    }
                }
                Some(out)
            }
            Coefficient::Rule(_) => None,
        }
    }
}

#[derive(Clone)]
pub enum HTerm {
    Zero,
    Constant(Array2<f64>),
    Rule(HRule),
}

impl std::fmt::Debug for HTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HTerm::Zero => f.write_str("Zero"),
            HTerm::Constant(m) => f.debug_tuple("Constant").field(m).finish(),
            HTerm::Rule(_) => f.write_str("Rule(..)"),
        }
    }
}

#[derive(Clone)]
pub struct SystemSpec {
    pub n: usize,
    pub d: usize,
    /// `A0`, evaluated at `εu`.
    pub a0: Coefficient,
    /// `A_j`, evaluated at `u`.
    pub a: Vec<Coefficient>,
    pub g: Option<ForcingFn>,
    pub h: HTerm,
    pub l: OperatorSymbol,
    pub m: OperatorSymbol,
    pub eps: f64,
    pub delta: f64,
    /// Lower bound `A0 >= c0 I`; the run fails once an eigenvalue drops below `c0/2`.
    pub c0: f64,
    /// Admissible amplitude of `εu`.
    pub b0: f64,
}

impl std::fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SystemSpec")
            .field("n", &self.n)
            .field("d", &self.d)
            .field("a0", &self.a0)
            .field("a", &self.a)
            .field("g", &self.g.is_some())
            .field("h", &self.h)
            .field("eps", &self.eps)
            .field("delta", &self.delta)
            .finish()
    }
}

impl SystemSpec {
    /// Linear system with constant symmetric coefficients and no forcing.
    pub fn linear(a0: Array2<f64>, a: Vec<Array2<f64>>, l: OperatorSymbol, m: OperatorSymbol, eps: f64, delta: f64) -> Self {
        let n = a0.nrows();
        let d = a.len();
        Self {
            n,
            d,
            a0: Coefficient::Constant(a0),
            a: a.into_iter().map(Coefficient::Constant).collect(),
            g: None,
            h: HTerm::Zero,
            l,
            m,
            eps,
            delta,
            c0: 0.5,
            b0: f64::INFINITY,
        }
    }

    pub fn with_params(&self, eps: f64, delta: f64) -> Self {
        let mut s = self.clone();
        s.eps = eps;
        s.delta = delta;
        s
    }

    pub fn is_linear(&self) -> bool {
        self.a0.is_constant()
            && self.a.iter().all(Coefficient::is_constant)
            && self.g.is_none()
            && !matches!(self.h, HTerm::Rule(_))
    }

    /// Check shapes, symmetry and the sampled lower bound of `A0` on `|v| <= b0`.
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.l.n != self.n || self.m.n != self.n {
            return Err(SolverError::InvalidInput("symbol component count differs from the system".into()));
        }
        if self.l.d != self.d || self.m.d != self.d || self.a.len() != self.d {
            return Err(SolverError::InvalidInput("dimension mismatch between coefficients and symbols".into()));
        }
        if !(self.eps > 0.0 && self.delta > 0.0) {
            return Err(SolverError::InvalidInput("ε and δ must be positive".into()));
        }
        let radius = if self.b0.is_finite() { self.b0 } else { 0.0 };
        let mut samples = vec![vec![0.0; self.n]];
        for c in 0..self.n {
            for sign in [-1.0, 1.0] {
                let mut v = vec![0.0; self.n];
                v[c] = sign * radius;
                samples.push(v);
            }
        }
        for v in &samples {
            let a0 = self.a0.eval(v);
            check_symmetric(&a0, "A0")?;
            let min = min_eig_real(&a0)?;
            if min < self.c0 {
                return Err(SolverError::A0Singular { min_eig: min, node: 0 });
            }
            for (j, aj) in self.a.iter().enumerate() {
                check_symmetric(&aj.eval(v), &format!("A_{}", j + 1))?;
            }
        }
        Ok(())
    }
}

fn check_symmetric(m: &Array2<f64>, name: &str) -> Result<(), SolverError> {
    let n = m.nrows();
    let scale = m.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for i in 0..n {
        for j in 0..n {
            if (m[[i, j]] - m[[j, i]]).abs() > 1e-12 * scale {
                return Err(SolverError::InvalidInput(format!("{name} is not symmetric")));
            }
        }
    }
    Ok(())
}

fn to_complex(m: &Array2<f64>) -> CMatrix {
    m.mapv(|x| Complex64::new(x, 0.0))
}

fn is_diagonal(m: &Array2<f64>) -> bool {
    m.indexed_iter().all(|((i, j), &v)| i == j || v == 0.0)
}

fn min_eig_real(m: &Array2<f64>) -> Result<f64, SolverError> {
    if is_diagonal(m) {
        return Ok((0..m.nrows()).map(|i| m[[i, i]]).fold(f64::INFINITY, f64::min));
    }
    let eig = linalg::herm_eig(&to_complex(m), 1e-10)?;
    Ok(eig.values[0])
}

/// Solve `A x = b` for symmetric positive definite `A`, checking `min eig >= c0/2`.
fn spd_solve(a: &Array2<f64>, b: &[f64], c0: f64, node: usize) -> Result<Vec<f64>, SolverError> {
    let n = a.nrows();
    if is_diagonal(a) {
        let mut out = vec![0.0; n];
        for i in 0..n {
            let d = a[[i, i]];
            if d < 0.5 * c0 {
                return Err(SolverError::A0Singular { min_eig: d, node });
            }
            out[i] = b[i] / d;
        }
        return Ok(out);
    }
    let eig = linalg::herm_eig(&to_complex(a), 1e-10)?;
    if eig.values[0] < 0.5 * c0 {
        return Err(SolverError::A0Singular { min_eig: eig.values[0], node });
    }
    let mut out = vec![0.0; n];
    for (j, &lam) in eig.values.iter().enumerate() {
        let coef: f64 = (0..n).map(|i| (eig.vectors[[i, j]].conj() * b[i]).re).sum::<f64>();
        let coef_im: f64 = (0..n).map(|i| (eig.vectors[[i, j]].conj() * b[i]).im).sum::<f64>();
        let w = Complex64::new(coef, coef_im) / lam;
        for (i, o) in out.iter_mut().enumerate() {
            *o += (eig.vectors[[i, j]] * w).re;
        }
    }
    Ok(out)
}

/// How the quasilinear integrator picks its step.
#[derive(Clone, Debug)]
pub struct StepPolicy {
    pub c_stiff: f64,
    pub c_cfl: f64,
    /// Overrides the automatic step when set.
    pub fixed_dt: Option<f64>,
    pub min_dt: f64,
    /// Apply the two-thirds rule after each stage.
    pub dealias: bool,
    /// Spacing of output samples; `None` stores only the initial and final states.
    pub output_interval: Option<f64>,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self { c_stiff: 0.1, c_cfl: 0.5, fixed_dt: None, min_dt: 1e-12, dealias: true, output_interval: None }
    }
}

impl StepPolicy {
    pub fn output_times(&self, t_end: f64) -> Vec<f64> {
        match self.output_interval {
            Some(h) if h > 0.0 && h < t_end => {
                let count = (t_end / h - 1e-9).ceil() as usize;
                (0..=count).map(|i| t_end * i as f64 / count as f64).collect()
            }
            _ => vec![0.0, t_end],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SpectralState>,
    /// `u_t` at each output time.
    pub derivs: Vec<SpectralState>,
    /// Number of RK4 steps taken (zero on the exact path).
    pub steps: usize,
    /// Largest step used by RK4.
    pub dt: Option<f64>,
    pub exact: bool,
}

/// Precomputed per-system data shared by the right-hand side, the integrators
/// and the norm instrumentation.
pub struct Context {
    pub sys: SystemSpec,
    pub tr: Transforms,
    /// `L̂(k)/δ + M̂(k)/ε` per mode.
    fast: Vec<CMatrix>,
    /// `-A0^{-1}(i k·A + L̂/δ + M̂/ε - H)` per mode on the linear path.
    generator: Option<Vec<CMatrix>>,
}

impl Context {
    pub fn new(sys: &SystemSpec, grid: &GridSpec) -> Result<Self, SolverError> {
        sys.validate()?;
        if grid.d != sys.d {
            return Err(SolverError::InvalidInput(format!("grid dimension {} but system dimension {}", grid.d, sys.d)));
        }
        let fast = (0..grid.num_points())
            .into_par_iter()
            .map(|i| -> Result<CMatrix, SymbolError> {
                let k = grid.wavevector(i);
                Ok(sys.l.eval(&k)?.mapv(|z| z / sys.delta) + sys.m.eval(&k)?.mapv(|z| z / sys.eps))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let generator = if sys.is_linear() {
            let a0 = to_complex(&sys.a0.eval(&vec![0.0; sys.n]));
            let a0inv = linalg::inverse(&a0)?;
            let gens = (0..grid.num_points())
                .map(|i| -> Result<CMatrix, SolverError> {
                    let b = mode_operator(sys, grid, i, &fast[i]);
                    Ok(a0inv.dot(&b).mapv(|z| -z))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Some(gens)
        } else {
            None
        };
        Ok(Self { sys: sys.clone(), tr: Transforms::new(*grid), fast, generator })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.tr.grid
    }

    pub fn is_exact_path(&self) -> bool {
        self.generator.is_some()
    }

    /// Per-mode generator of the linear path (`û_t = G(k) û`), if the system is linear.
    pub fn mode_generator(&self, idx: usize) -> Option<&CMatrix> {
        self.generator.as_ref().map(|g| &g[idx])
    }

    fn check_amplitude(&self, phys: &Array2<f64>) -> Result<(), SolverError> {
        if !self.sys.b0.is_finite() {
            return Ok(());
        }
        let mut worst: f64 = 0.0;
        for p in 0..phys.ncols() {
            let nrm = phys.column(p).iter().map(|v| v * v).sum::<f64>().sqrt() * self.sys.eps;
            worst = worst.max(nrm);
        }
        if worst > self.sys.b0 || !worst.is_finite() {
            return Err(SolverError::AmplitudeEscape { max: worst, b0: self.sys.b0 });
        }
        Ok(())
    }

    fn apply_fast(&self, state: &SpectralState) -> SpectralState {
        let mut out = state.clone();
        for (i, f) in self.fast.iter().enumerate() {
            let v = f.dot(&state.coeffs.column(i));
            out.coeffs.column_mut(i).assign(&v);
        }
        out
    }

    /// `u_t` for the given state.
    pub fn rhs(&self, state: &SpectralState, t: f64, dealias: bool) -> Result<SpectralState, SolverError> {
        if let Some(gens) = &self.generator {
            let mut out = state.clone();
            for (i, g) in gens.iter().enumerate() {
                let v = g.dot(&state.coeffs.column(i));
                out.coeffs.column_mut(i).assign(&v);
            }
            out.time = t;
            return Ok(out);
        }
        let sys = &self.sys;
        let grid = self.grid();
        let n = sys.n;
        let np = grid.num_points();
        let u = self.tr.to_physical(state);
        self.check_amplitude(&u)?;
        // spectral stiff part, moved to physical space
        let fast = self.apply_fast(state);
        let mut total = self.tr.to_physical(&fast).mapv(|x| -x);
        for (j, aj) in sys.a.iter().enumerate() {
            if aj.is_zero() {
                continue;
            }
            let ux = self.tr.to_physical(&self.tr.derivative(state, j));
            for p in 0..np {
                let up: Vec<f64> = u.column(p).to_vec();
                let m = aj.eval(&up);
                let flux = m.dot(&ux.column(p));
                for c in 0..n {
                    total[[c, p]] -= flux[c];
                }
            }
        }
        if sys.g.is_some() || !matches!(sys.h, HTerm::Zero) {
            for p in 0..np {
                let x = grid.node(p);
                let up: Vec<f64> = u.column(p).to_vec();
                if let Some(g) = &sys.g {
                    let gv = g(t, &x);
                    for c in 0..n {
                        total[[c, p]] += gv[c];
                    }
                }
                let hu = match &sys.h {
                    HTerm::Zero => None,
                    HTerm::Constant(h) => Some(h.dot(&u.column(p))),
                    HTerm::Rule(f) => Some(f(t, &x, &up).dot(&u.column(p))),
                };
                if let Some(hu) = hu {
                    for c in 0..n {
                        total[[c, p]] += hu[c];
                    }
                }
            }
        }
        let mut solved = Array2::zeros((n, np));
        for p in 0..np {
            let v: Vec<f64> = u.column(p).iter().map(|x| x * sys.eps).collect();
            let a0 = sys.a0.eval(&v);
            let rhs: Vec<f64> = total.column(p).to_vec();
            let x = spd_solve(&a0, &rhs, sys.c0, p)?;
            for c in 0..n {
                solved[[c, p]] = x[c];
            }
        }
        let mut out = self.tr.to_spectral(&solved).map_err(|e| SolverError::InvalidInput(e.to_string()))?;
        // without dealiasing the Nyquist mode is kept so the scheme is exact nodal collocation
        if dealias {
            out.truncate_band(grid);
        }
        out.time = t;
        Ok(out)
    }

    /// Step bound `min(c_stiff δ, c_stiff / ρ_fast, c_cfl Δx / λ_max)`.
    pub fn auto_dt(&self, state: &SpectralState, policy: &StepPolicy) -> Result<f64, SolverError> {
        let sys = &self.sys;
        let grid = self.grid();
        let mut dt = policy.c_stiff * sys.delta;
        let rho = self
            .fast
            .iter()
            .enumerate()
            .filter(|(i, _)| !policy.dealias || grid.in_dealiased_band(*i))
            .map(|(_, f)| linalg::spectral_norm(f))
            .fold(0.0, f64::max)
            / sys.c0;
        if rho > 0.0 {
            dt = dt.min(policy.c_stiff / rho);
        }
        if sys.a.iter().any(|a| !a.is_zero()) {
            let u = self.tr.to_physical(state);
            let mut lam: f64 = 0.0;
            for p in 0..u.ncols() {
                let up: Vec<f64> = u.column(p).to_vec();
                for aj in &sys.a {
                    let m = to_complex(&aj.eval(&up));
                    lam = lam.max(linalg::spectral_norm(&m));
                }
            }
            lam /= sys.c0;
            if lam > 0.0 {
                dt = dt.min(policy.c_cfl * grid.dx() / lam);
            }
        }
        Ok(dt)
    }

    fn rk4_step(&self, state: &SpectralState, t: f64, h: f64, dealias: bool) -> Result<SpectralState, SolverError> {
        let k1 = self.rhs(state, t, dealias)?;
        let mut s = state.clone();
        s.scaled_add(0.5 * h, &k1);
        let k2 = self.rhs(&s, t + 0.5 * h, dealias)?;
        let mut s = state.clone();
        s.scaled_add(0.5 * h, &k2);
        let k3 = self.rhs(&s, t + 0.5 * h, dealias)?;
        let mut s = state.clone();
        s.scaled_add(h, &k3);
        let k4 = self.rhs(&s, t + h, dealias)?;
        let mut out = state.clone();
        out.scaled_add(h / 6.0, &k1);
        out.scaled_add(h / 3.0, &k2);
        out.scaled_add(h / 3.0, &k3);
        out.scaled_add(h / 6.0, &k4);
        out.time = t + h;
        Ok(out)
    }

    /// Integrate from `u0` to `t_end`, sampling at the policy's output times.
    pub fn simulate(&self, u0: &SpectralState, t_end: f64, policy: &StepPolicy) -> Result<Trajectory, SolverError> {
        if !(t_end > 0.0) {
            return Err(SolverError::InvalidInput("horizon must be positive".into()));
        }
        if u0.components() != self.sys.n || u0.num_modes() != self.grid().num_points() {
            return Err(SolverError::InvalidInput("initial state does not match the system/grid".into()));
        }
        let times = policy.output_times(t_end);
        if self.generator.is_some() {
            return self.simulate_exact(u0, &times);
        }
        let mut state = u0.clone();
        state.time = 0.0;
        if policy.dealias {
            state.truncate_band(self.grid());
        }
        let mut states = vec![state.clone()];
        let mut derivs = vec![self.rhs(&state, 0.0, policy.dealias)?];
        let mut steps = 0usize;
        let mut t = 0.0;
        let mut dt_used: f64 = 0.0;
        for &target in &times[1..] {
            let dt = match policy.fixed_dt {
                Some(h) => h,
                None => self.auto_dt(&state, policy)?,
            };
            if !(dt >= policy.min_dt) {
                return Err(SolverError::StepCollapse { dt });
            }
            dt_used = dt_used.max(dt);
            while target - t > 1e-12 * target.max(1.0) {
                let h = dt.min(target - t);
                state = self.rk4_step(&state, t, h, policy.dealias)?;
                t = if target - (t + h) <= 1e-12 * target.max(1.0) { target } else { t + h };
                steps += 1;
            }
            state.time = target;
            derivs.push(self.rhs(&state, target, policy.dealias)?);
            states.push(state.clone());
        }
        Ok(Trajectory { times, states, derivs, steps, dt: Some(dt_used), exact: false })
    }

    fn simulate_exact(&self, u0: &SpectralState, times: &[f64]) -> Result<Trajectory, SolverError> {
        let grid = *self.grid();
        let a0 = to_complex(&self.sys.a0.eval(&vec![0.0; self.sys.n]));
        let props = (0..grid.num_points())
            .into_par_iter()
            .map(|i| ExactPropagator::new(&a0, &mode_operator(&self.sys, &grid, i, &self.fast[i])))
            .collect::<Result<Vec<_>, _>>()?;
        let mut states = Vec::with_capacity(times.len());
        let mut derivs = Vec::with_capacity(times.len());
        for &t in times {
            let cols = props
                .par_iter()
                .enumerate()
                .map(|(i, p)| Ok(p.matrix(t)?.dot(&u0.coeffs.column(i))))
                .collect::<Result<Vec<Array1<Complex64>>, LinalgError>>()?;
            let mut s = u0.clone();
            for (i, c) in cols.into_iter().enumerate() {
                s.coeffs.column_mut(i).assign(&c);
            }
            s.time = t;
            derivs.push(self.rhs(&s, t, false)?);
            states.push(s);
        }
        Ok(Trajectory { times: times.to_vec(), states, derivs, steps: 0, dt: None, exact: true })
    }
}

/// `i k·A + L̂/δ + M̂/ε - H` at one mode, with constant coefficients taken at `u = 0`.
fn mode_operator(sys: &SystemSpec, grid: &GridSpec, idx: usize, fast: &CMatrix) -> CMatrix {
    let k = grid.wavevector(idx);
    let zero = vec![0.0; sys.n];
    let mut b = fast.clone();
    for (j, aj) in sys.a.iter().enumerate() {
        if k[j] != 0 {
            let m = aj.eval(&zero);
            b.zip_mut_with(&m, |z, &v| *z += Complex64::new(0.0, k[j] as f64 * v));
        }
    }
    if let HTerm::Constant(h) = &sys.h {
        b.zip_mut_with(h, |z, &v| *z -= Complex64::new(v, 0.0));
    }
    b
}

/// `u_t` of a state; builds a fresh [`Context`] (use [`Context::rhs`] in loops).
pub fn rhs_eval(sys: &SystemSpec, grid: &GridSpec, state: &SpectralState, t: f64) -> Result<SpectralState, SolverError> {
    Context::new(sys, grid)?.rhs(state, t, !sys.is_linear())
}

/// Convenience wrapper around [`Context::simulate`].
pub fn simulate(
    sys: &SystemSpec,
    grid: &GridSpec,
    u0: &SpectralState,
    t_end: f64,
    policy: &StepPolicy,
) -> Result<Trajectory, SolverError> {
    Context::new(sys, grid)?.simulate(u0, t_end, policy)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormWeights {
    /// `ε^k` per time derivative, plus the unweighted `‖u_t‖`.
    Simplified,
    /// Also report the `δ^{k+|α|-1}/ε^{|α|}`-weighted sum.
    Full,
}

#[derive(Clone, Debug)]
pub struct NormRow {
    pub t: f64,
    /// `‖u‖_{H^l}` for `l = 0..=s0+1`.
    pub hs: Vec<f64>,
    pub ut_l2: f64,
    pub ut_a0: f64,
    pub triple: f64,
    pub quad: f64,
    pub full: Option<f64>,
}

/// Multi-indices `α` with `|α| <= order` in `d` dimensions, graded then lexicographic.
pub fn multi_indices(d: usize, order: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for total in 0..=order {
        let mut cur = vec![0; d];
        fn rec(pos: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if pos + 1 == cur.len() {
                cur[pos] = left;
                out.push(cur.clone());
                return;
            }
            for v in (0..=left).rev() {
                cur[pos] = v;
                rec(pos + 1, left - v, cur, out);
            }
        }
        rec(0, total, &mut cur, &mut out);
    }
    out
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl Context {
    fn d_alpha(&self, state: &SpectralState, alpha: &[usize]) -> SpectralState {
        let grid = self.grid();
        let mut out = state.clone();
        for m in 0..state.num_modes() {
            let k = grid.wavevector(m);
            let mut f = Complex64::new(1.0, 0.0);
            for (j, &a) in alpha.iter().enumerate() {
                if a > 0 && grid.is_nyquist(m) {
                    f = Complex64::new(0.0, 0.0);
                }
                f *= Complex64::new(0.0, k[j] as f64).powu(a as u32);
            }
            out.coeffs.column_mut(m).mapv_inplace(|z| z * f);
        }
        out
    }

    fn complex_fields(&self, state: &SpectralState) -> Vec<Vec<Complex64>> {
        (0..state.components())
            .map(|c| self.tr.inverse_complex(state.coeffs.row(c).as_slice().expect("row-major state")))
            .collect()
    }

    /// `‖v‖²_{0,A0}` with `A0` sampled at nodes.
    fn a0_sq(&self, v: &SpectralState, a0_nodes: &[Array2<f64>]) -> f64 {
        let fields = self.complex_fields(v);
        let np = a0_nodes.len();
        let mut acc = 0.0;
        for (p, a0) in a0_nodes.iter().enumerate() {
            for r in 0..self.sys.n {
                for c in 0..self.sys.n {
                    let w = a0[[r, c]];
                    if w != 0.0 {
                        acc += w * (fields[r][p].conj() * fields[c][p]).re;
                    }
                }
            }
        }
        acc / np as f64
    }

    fn a0_sobolev_sq(&self, v: &SpectralState, order: usize, a0_nodes: &[Array2<f64>]) -> f64 {
        multi_indices(self.sys.d, order).iter().map(|a| self.a0_sq(&self.d_alpha(v, a), a0_nodes)).sum()
    }

    fn a0_at_nodes(&self, state: &SpectralState) -> Vec<Array2<f64>> {
        let u = self.tr.to_physical(state);
        (0..u.ncols())
            .map(|p| {
                let v: Vec<f64> = u.column(p).iter().map(|x| x * self.sys.eps).collect();
                self.sys.a0.eval(&v)
            })
            .collect()
    }

    fn apply_generator(&self, state: &SpectralState) -> SpectralState {
        let gens = self.generator.as_ref().expect("linear path");
        let mut out = state.clone();
        for (i, g) in gens.iter().enumerate() {
            let v = g.dot(&state.coeffs.column(i));
            out.coeffs.column_mut(i).assign(&v);
        }
        out
    }

    /// Time derivatives `∂_t^k u`, `k = 0..=k_max`, at output sample `i`.
    fn derivatives_at(&self, traj: &Trajectory, i: usize, k_max: usize) -> Result<Vec<SpectralState>, SolverError> {
        let mut out = vec![traj.states[i].clone()];
        if k_max == 0 {
            return Ok(out);
        }
        out.push(traj.derivs[i].clone());
        if k_max == 1 {
            return Ok(out);
        }
        if self.generator.is_some() {
            for _ in 2..=k_max {
                let next = self.apply_generator(out.last().unwrap());
                out.push(next);
            }
            return Ok(out);
        }
        if k_max > 3 {
            return Err(SolverError::UnsupportedSystem(format!(
                "finite-difference time derivatives implemented up to order 3, requested {k_max}"
            )));
        }
        let nt = traj.times.len();
        let needed = k_max + 1;
        let spacing = if nt > 1 { traj.times[1] - traj.times[0] } else { f64::INFINITY };
        let required = 0.25 * self.sys.delta;
        let uniform = traj.times.windows(2).all(|w| ((w[1] - w[0]) - spacing).abs() <= 1e-9 * spacing);
        if nt < needed || spacing > required * (1.0 + 1e-9) || !uniform {
            return Err(SolverError::InsufficientSampling { spacing, required, needed });
        }
        let h = spacing;
        let d = &traj.derivs;
        let comb = |terms: &[(usize, f64)], scale: f64| {
            let mut s = d[terms[0].0].clone();
            s.coeffs.mapv_inplace(|z| z * (terms[0].1 * scale));
            for &(j, w) in &terms[1..] {
                s.scaled_add(w * scale, &d[j]);
            }
            s
        };
        // first derivative of u_t (k = 2)
        let first = if i == 0 {
            comb(&[(0, -1.5), (1, 2.0), (2, -0.5)], 1.0 / h)
        } else if i == nt - 1 {
            comb(&[(i, 1.5), (i - 1, -2.0), (i - 2, 0.5)], 1.0 / h)
        } else {
            comb(&[(i + 1, 0.5), (i - 1, -0.5)], 1.0 / h)
        };
        out.push(first);
        if k_max == 3 {
            let second = if i == 0 {
                comb(&[(0, 2.0), (1, -5.0), (2, 4.0), (3, -1.0)], 1.0 / (h * h))
            } else if i == nt - 1 {
                comb(&[(i, 2.0), (i - 1, -5.0), (i - 2, 4.0), (i - 3, -1.0)], 1.0 / (h * h))
            } else {
                comb(&[(i + 1, 1.0), (i, -2.0), (i - 1, 1.0)], 1.0 / (h * h))
            };
            out.push(second);
        }
        Ok(out)
    }

    /// Norm history of a trajectory with index `s = s0 + 1`.
    pub fn norm_report(&self, traj: &Trajectory, s0: usize, weights: NormWeights) -> Result<Vec<NormRow>, SolverError> {
        let s = s0 + 1;
        let grid = *self.grid();
        let eps = self.sys.eps;
        let delta = self.sys.delta;
        (0..traj.times.len())
            .map(|i| {
                let derivs = self.derivatives_at(traj, i, s)?;
                let state = &traj.states[i];
                let a0_nodes = self.a0_at_nodes(state);
                let hs = (0..=s).map(|l| state.hs_norm(&grid, l as f64)).collect();
                let mut triple_sq = 0.0;
                for (k, dk) in derivs.iter().enumerate() {
                    triple_sq += eps.powi(2 * k as i32) * self.a0_sobolev_sq(dk, s - k, &a0_nodes);
                }
                let ut_a0_sq = self.a0_sq(&derivs[1], &a0_nodes);
                let full = match weights {
                    NormWeights::Simplified => None,
                    NormWeights::Full => {
                        let mut total = state.hs_norm(&grid, s as f64);
                        for (k, dk) in derivs.iter().enumerate().skip(1) {
                            for alpha in multi_indices(grid.d, s - k) {
                                let order: usize = alpha.iter().sum();
                                let w = delta.powi((k + order) as i32 - 1) / eps.powi(order as i32);
                                total += w * self.d_alpha(dk, &alpha).l2_norm();
                            }
                        }
                        Some(total)
                    }
                };
                Ok(NormRow {
                    t: traj.times[i],
                    hs,
                    ut_l2: derivs[1].l2_norm(),
                    ut_a0: ut_a0_sq.sqrt(),
                    triple: triple_sq.sqrt(),
                    quad: (triple_sq + ut_a0_sq).sqrt(),
                    full,
                })
            })
            .collect()
    }

    /// `∂_t^k u(0)` for `k = 0..=k_max`, by differentiating the equation in time
    /// and substituting lower-order derivatives.
    pub fn time_derivs_at_zero(&self, u0: &SpectralState, k_max: usize, dealias: bool) -> Result<Vec<SpectralState>, SolverError> {
        let mut out = vec![u0.clone()];
        if self.generator.is_some() {
            for _ in 0..k_max {
                let next = self.apply_generator(out.last().unwrap());
                out.push(next);
            }
            return Ok(out);
        }
        let sys = &self.sys;
        if matches!(sys.a0, Coefficient::Rule(_)) || sys.a.iter().any(|a| matches!(a, Coefficient::Rule(_))) {
            return Err(SolverError::UnsupportedSystem("time-derivative recursion needs constant or affine coefficients".into()));
        }
        if matches!(sys.h, HTerm::Rule(_)) || (sys.g.is_some() && k_max >= 2) {
            return Err(SolverError::UnsupportedSystem("time-derivative recursion needs G = 0 and constant H beyond first order".into()));
        }
        let n = sys.n;
        let grid = *self.grid();
        let np = grid.num_points();
        let mut phys: Vec<Array2<f64>> = vec![self.tr.to_physical(u0)];
        // spatial derivatives of each U_i, physical: dx[i][j]
        let mut dx: Vec<Vec<Array2<f64>>> = vec![(0..sys.d).map(|j| self.tr.to_physical(&self.tr.derivative(u0, j))).collect()];
        let u = &phys[0];
        let a0_nodes: Vec<Array2<f64>> = (0..np)
            .map(|p| {
                let v: Vec<f64> = u.column(p).iter().map(|x| x * sys.eps).collect();
                sys.a0.eval(&v)
            })
            .collect();
        let aj_nodes: Vec<Vec<Array2<f64>>> = sys
            .a
            .iter()
            .map(|aj| (0..np).map(|p| aj.eval(&u.column(p).to_vec())).collect())
            .collect();

        for k in 0..k_max {
            let fast = self.tr.to_physical(&self.apply_fast(&out[k]));
            let mut total = fast.mapv(|x| -x);
            for p in 0..np {
                let x = grid.node(p);
                if k == 0 {
                    if let Some(g) = &sys.g {
                        let gv = g(0.0, &x);
                        for c in 0..n {
                            total[[c, p]] += gv[c];
                        }
                    }
                }
                if let HTerm::Constant(h) = &sys.h {
                    let hu = h.dot(&phys[k].column(p));
                    for c in 0..n {
                        total[[c, p]] += hu[c];
                    }
                }
                for (j, aj) in sys.a.iter().enumerate() {
                    if aj.is_zero() {
                        continue;
                    }
                    for i in 0..=k {
                        let coef = if i == 0 {
                            aj_nodes[j][p].clone()
                        } else {
                            let dv: Vec<f64> = phys[i].column(p).to_vec();
                            aj.directional(&dv).expect("checked above")
                        };
                        let flux = coef.dot(&dx[k - i][j].column(p)) * binomial(k, i);
                        for c in 0..n {
                            total[[c, p]] -= flux[c];
                        }
                    }
                }
                for i in 1..=k {
                    let dv: Vec<f64> = phys[i].column(p).iter().map(|x| x * sys.eps).collect();
                    let da0 = sys.a0.directional(&dv).expect("checked above");
                    let corr = da0.dot(&phys[k + 1 - i].column(p)) * binomial(k, i);
                    for c in 0..n {
                        total[[c, p]] -= corr[c];
                    }
                }
            }
            let mut solved = Array2::zeros((n, np));
            for p in 0..np {
                let x = spd_solve(&a0_nodes[p], &total.column(p).to_vec(), sys.c0, p)?;
                for c in 0..n {
                    solved[[c, p]] = x[c];
                }
            }
            let mut next = self.tr.to_spectral(&solved).map_err(|e| SolverError::InvalidInput(e.to_string()))?;
            if dealias {
                next.truncate_band(&grid);
            }
            phys.push(self.tr.to_physical(&next));
            dx.push((0..sys.d).map(|j| self.tr.to_physical(&self.tr.derivative(&next, j))).collect());
            out.push(next);
        }
        Ok(out)
    }
}
