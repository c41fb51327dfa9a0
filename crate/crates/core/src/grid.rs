//! Periodic grids on the torus `[0, 2π)^d` and Fourier-coefficient states.
//!
//! Coefficients use the normalised convention `u(x) = Σ_k û(k) e^{i k·x}`,
//! so that `‖u‖²_{L²}` (with the torus measure normalised to one) equals
//! `Σ_k |û(k)|²`. Modes are stored in FFT order along every axis, flattened
//! row-major with axis 0 slowest.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid needs an even number of modes per axis, at least 8 (got {0})")]
    BadModeCount(usize),
    #[error("grid dimension must be 1, 2 or 3 (got {0})")]
    BadDimension(usize),
    #[error("array shape {got:?} does not match the grid (expected {expected:?})")]
    ShapeMismatch { got: (usize, usize), expected: (usize, usize) },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridSpec {
    pub d: usize,
    pub n: usize,
}

impl GridSpec {
    pub fn new(d: usize, n: usize) -> Result<Self, GridError> {
        if !(1..=3).contains(&d) {
            return Err(GridError::BadDimension(d));
        }
        if n < 8 || n % 2 != 0 {
            return Err(GridError::BadModeCount(n));
        }
        Ok(Self { d, n })
    }

    pub fn num_points(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn dx(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    fn axis_wavenumber(&self, i: usize) -> i64 {
        if i <= self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    fn axis_indices(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.d];
        for a in (0..self.d).rev() {
            out[a] = idx % self.n;
            idx /= self.n;
        }
        out
    }

    /// Integer wavevector of a flattened mode index.
    pub fn wavevector(&self, idx: usize) -> Vec<i64> {
        self.axis_indices(idx).into_iter().map(|i| self.axis_wavenumber(i)).collect()
    }

    pub fn wavevectors(&self) -> Vec<Vec<i64>> {
        (0..self.num_points()).map(|i| self.wavevector(i)).collect()
    }

    /// Flattened index of a wavevector, if it is resolved (`-N/2 < k_j <= N/2`).
    pub fn index_of(&self, k: &[i64]) -> Option<usize> {
        if k.len() != self.d {
            return None;
        }
        let half = (self.n / 2) as i64;
        let mut idx = 0;
        for &kj in k {
            if kj <= -half || kj > half {
                return None;
            }
            let i = if kj >= 0 { kj } else { kj + self.n as i64 } as usize;
            idx = idx * self.n + i;
        }
        Some(idx)
    }

    /// Index of `-k` for the mode at `idx`; Nyquist components map to themselves.
    pub fn conjugate_index(&self, idx: usize) -> usize {
        let mut out = 0;
        for i in self.axis_indices(idx) {
            out = out * self.n + (self.n - i) % self.n;
        }
        out
    }

    /// True if any axis sits at the unpaired Nyquist wavenumber `N/2`.
    pub fn is_nyquist(&self, idx: usize) -> bool {
        self.axis_indices(idx).into_iter().any(|i| i == self.n / 2)
    }

    /// Mode kept by the two-thirds rule: `3|k_j| < N` on every axis.
    pub fn in_dealiased_band(&self, idx: usize) -> bool {
        self.wavevector(idx).iter().all(|k| 3 * k.unsigned_abs() < self.n as u64)
    }

    /// Physical coordinates of a collocation node.
    pub fn node(&self, idx: usize) -> Vec<f64> {
        self.axis_indices(idx).into_iter().map(|i| i as f64 * self.dx()).collect()
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.num_points()).map(|i| self.node(i)).collect()
    }

    pub fn ksq(&self, idx: usize) -> f64 {
        self.wavevector(idx).iter().map(|&k| (k * k) as f64).sum()
    }
}

/// Fourier coefficients of an `n`-component field, `coeffs[[component, mode]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralState {
    pub coeffs: Array2<Complex64>,
    pub time: f64,
}

impl SpectralState {
    pub fn zeros(components: usize, grid: &GridSpec) -> Self {
        Self { coeffs: Array2::zeros((components, grid.num_points())), time: 0.0 }
    }

    pub fn components(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn num_modes(&self) -> usize {
        self.coeffs.ncols()
    }

    pub fn mode(&self, idx: usize) -> Array1<Complex64> {
        self.coeffs.column(idx).to_owned()
    }

    pub fn set_mode(&mut self, idx: usize, v: &Array1<Complex64>) {
        self.coeffs.column_mut(idx).assign(v);
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `(Σ_k (1+|k|²)^s |û(k)|²)^{1/2}`.
    pub fn hs_norm(&self, grid: &GridSpec, s: f64) -> f64 {
        let mut acc = 0.0;
        for m in 0..self.num_modes() {
            let w = (1.0 + grid.ksq(m)).powf(s);
            acc += w * self.coeffs.column(m).iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        acc.sqrt()
    }

    /// Largest `|û(-k) - conj(û(k))|`, zero for coefficients of a real field.
    pub fn hermitian_defect(&self, grid: &GridSpec) -> f64 {
        let mut worst: f64 = 0.0;
        for m in 0..self.num_modes() {
            let c = grid.conjugate_index(m);
            for comp in 0..self.components() {
                worst = worst.max((self.coeffs[[comp, c]] - self.coeffs[[comp, m]].conj()).norm());
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &SpectralState) -> f64 {
        self.coeffs.iter().zip(other.coeffs.iter()).fold(0.0, |m, (a, b)| m.max((a - b).norm()))
    }

    pub fn scaled_add(&mut self, alpha: f64, other: &SpectralState) {
        self.coeffs.scaled_add(Complex64::new(alpha, 0.0), &other.coeffs);
    }

    /// Zero every mode outside the two-thirds band and every Nyquist mode.
    pub fn truncate_band(&mut self, grid: &GridSpec) {
        for m in 0..self.num_modes() {
            if grid.is_nyquist(m) || !grid.in_dealiased_band(m) {
                self.coeffs.column_mut(m).fill(Complex64::new(0.0, 0.0));
            }
        }
    }

    /// Zero only the Nyquist modes.
    pub fn clear_nyquist(&mut self, grid: &GridSpec) {
        for m in 0..self.num_modes() {
            if grid.is_nyquist(m) {
                self.coeffs.column_mut(m).fill(Complex64::new(0.0, 0.0));
            }
        }
    }
}

/// FFT plans for one grid. Cheap to clone; safe to share across threads.
#[derive(Clone)]
pub struct Transforms {
    pub grid: GridSpec,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Transforms {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transforms").field("grid", &self.grid).finish()
    }
}

impl Transforms {
    pub fn new(grid: GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(grid.n);
        let inv = planner.plan_fft_inverse(grid.n);
        Self { grid, fwd, inv }
    }

    fn transform_axes(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.grid.n;
        let total = data.len();
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for axis in 0..self.grid.d {
            let stride = n.pow((self.grid.d - 1 - axis) as u32);
            let block = stride * n;
            for start in (0..total).step_by(block) {
                for offset in 0..stride {
                    let base = start + offset;
                    for (i, slot) in line.iter_mut().enumerate() {
                        *slot = data[base + i * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (i, v) in line.iter().enumerate() {
                        data[base + i * stride] = *v;
                    }
                }
            }
        }
    }

    /// Complex samples on the grid to normalised coefficients.
    pub fn forward_complex(&self, values: &[Complex64]) -> Vec<Complex64> {
        let mut data = values.to_vec();
        self.transform_axes(&mut data, &self.fwd);
        let scale = 1.0 / self.grid.num_points() as f64;
        data.iter_mut().for_each(|z| *z *= scale);
        data
    }

    /// Normalised coefficients to complex samples on the grid.
    pub fn inverse_complex(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        let mut data = coeffs.to_vec();
        self.transform_axes(&mut data, &self.inv);
        data
    }

    /// Real fields (`components x points`) to a spectral state.
    pub fn to_spectral(&self, fields: &Array2<f64>) -> Result<SpectralState, GridError> {
        let np = self.grid.num_points();
        if fields.ncols() != np {
            return Err(GridError::ShapeMismatch { got: fields.dim(), expected: (fields.nrows(), np) });
        }
        let mut coeffs = Array2::zeros((fields.nrows(), np));
        for c in 0..fields.nrows() {
            let vals: Vec<Complex64> = fields.row(c).iter().map(|&x| Complex64::new(x, 0.0)).collect();
            let out = self.forward_complex(&vals);
            coeffs.row_mut(c).iter_mut().zip(out).for_each(|(d, s)| *d = s);
        }
        Ok(SpectralState { coeffs, time: 0.0 })
    }

    /// Real parts of the physical fields of a spectral state.
    pub fn to_physical(&self, state: &SpectralState) -> Array2<f64> {
        let np = self.grid.num_points();
        let mut out = Array2::zeros((state.components(), np));
        for c in 0..state.components() {
            let vals = self.inverse_complex(state.coeffs.row(c).as_slice().expect("row-major state"));
            out.row_mut(c).iter_mut().zip(vals).for_each(|(d, s)| *d = s.re);
        }
        out
    }

    /// Spectral partial derivative along `axis` (Nyquist mode dropped).
    pub fn derivative(&self, state: &SpectralState, axis: usize) -> SpectralState {
        let mut out = state.clone();
        for m in 0..state.num_modes() {
            let factor = if self.grid.is_nyquist(m) {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, self.grid.wavevector(m)[axis] as f64)
            };
            out.coeffs.column_mut(m).mapv_inplace(|z| z * factor);
        }
        out
    }

    /// Sample a real field given as a closure of the node coordinates.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.grid.num_points()).map(|i| f(&self.grid.node(i))).collect()
    }
}
