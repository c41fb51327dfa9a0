//! The rotation example `a(εw) u_t - v/δ = 0`, `a(εw) v_t + u/δ = 0`, `w_t = 0`
//! and its closed-form solution `z = u + iv = z0 · exp(-it / (δ a(εw0(x))))`.
//!
//! Spatial derivatives are computed with truncated Taylor series ([`Jet`]), so
//! norms of `∂_x^l ∂_t^k z` are exact up to quadrature of a smooth, phase-free
//! integrand.

use std::ops::{Add, Mul, Neg, Sub};

use ndarray::{array, Array2};
use num_complex::Complex64;

use crate::solver::{Coefficient, HTerm, SystemSpec};
use crate::symbols::OperatorSymbol;

/// Truncated Taylor series `Σ c_j h^j` about a point; `c_j = f^{(j)} / j!`.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub c: Vec<f64>,
}

impl Jet {
    pub fn constant(v: f64, order: usize) -> Self {
        let mut c = vec![0.0; order + 1];
        c[0] = v;
        Self { c }
    }

    /// The identity function expanded about `x`.
    pub fn variable(x: f64, order: usize) -> Self {
        let mut j = Self::constant(x, order);
        if order > 0 {
            j.c[1] = 1.0;
        }
        j
    }

    pub fn order(&self) -> usize {
        self.c.len() - 1
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// `f^{(k)}` at the expansion point.
    pub fn derivative(&self, k: usize) -> f64 {
        self.c[k] * (1..=k).map(|i| i as f64).product::<f64>()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { c: self.c.iter().map(|v| v * s).collect() }
    }

    pub fn add_const(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.c[0] += s;
        out
    }

    pub fn recip(&self) -> Self {
        let n = self.c.len();
        let mut r = vec![0.0; n];
        r[0] = 1.0 / self.c[0];
        for j in 1..n {
            let s: f64 = (1..=j).map(|i| self.c[i] * r[j - i]).sum();
            r[j] = -s / self.c[0];
        }
        Self { c: r }
    }

    pub fn exp(&self) -> Self {
        let n = self.c.len();
        let mut g = vec![0.0; n];
        g[0] = self.c[0].exp();
        for j in 1..n {
            let s: f64 = (1..=j).map(|i| i as f64 * self.c[i] * g[j - i]).sum();
            g[j] = s / j as f64;
        }
        Self { c: g }
    }

    /// `(sin f, cos f)`.
    pub fn sin_cos(&self) -> (Self, Self) {
        let n = self.c.len();
        let mut s = vec![0.0; n];
        let mut c = vec![0.0; n];
        s[0] = self.c[0].sin();
        c[0] = self.c[0].cos();
        for j in 1..n {
            let (mut ss, mut cc) = (0.0, 0.0);
            for i in 1..=j {
                let f = i as f64 * self.c[i];
                ss += f * c[j - i];
                cc -= f * s[j - i];
            }
            s[j] = ss / j as f64;
            c[j] = cc / j as f64;
        }
        (Self { c: s }, Self { c })
    }

    pub fn sin(&self) -> Self {
        self.sin_cos().0
    }

    pub fn cos(&self) -> Self {
        self.sin_cos().1
    }

    pub fn powi(&self, k: u32) -> Self {
        let mut out = Self::constant(1.0, self.order());
        for _ in 0..k {
            out = &out * self;
        }
        out
    }
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, o: &Jet) -> Jet {
        Jet { c: self.c.iter().zip(&o.c).map(|(a, b)| a + b).collect() }
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, o: &Jet) -> Jet {
        Jet { c: self.c.iter().zip(&o.c).map(|(a, b)| a - b).collect() }
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, o: &Jet) -> Jet {
        let n = self.c.len();
        let mut c = vec![0.0; n];
        for (i, a) in self.c.iter().enumerate() {
            for (j, b) in o.c[..n - i].iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        Jet { c }
    }
}

/// Scalar profile usable both on values and on jets.
pub type JetFn = dyn Fn(&Jet) -> Jet + Sync;

/// `a(v) = 1 + v`.
pub fn affine_profile(v: &Jet) -> Jet {
    v.add_const(1.0)
}

pub fn cos_profile(x: &Jet) -> Jet {
    x.cos()
}

/// Closed-form solution `z(t, x)` for initial value `z0` (`z0 = δ` in the well-prepared case).
pub fn ode_solution(z0: f64, delta: f64, eps: f64, a: &dyn Fn(f64) -> f64, w0: &dyn Fn(f64) -> f64, xs: &[f64], t: f64) -> Vec<Complex64> {
    xs.iter()
        .map(|&x| {
            let phi = 1.0 / (delta * a(eps * w0(x)));
            Complex64::from_polar(z0, -t * phi)
        })
        .collect()
}

/// `z = δ exp(-it / (δ a(εw0(x))))` for data `u0 = δ`, `v0 = 0`.
pub fn ode_example_exact(delta: f64, eps: f64, a: &dyn Fn(f64) -> f64, w0: &dyn Fn(f64) -> f64, xs: &[f64], t: f64) -> Vec<Complex64> {
    ode_solution(delta, delta, eps, a, w0, xs, t)
}

/// Closed-form solution of the rotation example with jet-valued profiles.
pub struct OdeExample<'a> {
    pub z0: f64,
    pub delta: f64,
    pub eps: f64,
    pub a: &'a JetFn,
    pub w0: &'a JetFn,
}

impl OdeExample<'_> {
    /// Taylor jets in `x` of the real and imaginary parts of `∂_t^k z(t, ·)` at `x`.
    pub fn jets(&self, x: f64, t: f64, k: u32, order: usize) -> (Jet, Jet) {
        let xv = Jet::variable(x, order);
        let w = (self.w0)(&xv).scale(self.eps);
        let phi = (self.a)(&w).scale(self.delta).recip();
        // ∂_t^k z = z0 φ^k exp(-i(tφ + kπ/2))
        let phase = phi.scale(t).add_const(k as f64 * std::f64::consts::FRAC_PI_2);
        let (s, c) = phase.sin_cos();
        let amp = phi.powi(k).scale(self.z0);
        (&amp * &c, -&(&amp * &s))
    }

    /// `‖∂_x^l ∂_t^k z(t)‖_{L²}` on the normalized torus, `points`-node trapezoid rule.
    pub fn derivative_norm(&self, t: f64, k: u32, l: usize, points: usize) -> f64 {
        let h = std::f64::consts::TAU / points as f64;
        let sum: f64 = (0..points)
            .map(|p| {
                let (re, im) = self.jets(p as f64 * h, t, k, l);
                let (dr, di) = (re.derivative(l), im.derivative(l));
                dr * dr + di * di
            })
            .sum();
        (sum / points as f64).sqrt()
    }

    /// `‖z(t)‖_{H^s}` with `(1 + |k|²)^s` weights, i.e. `Σ_j C(s,j) ‖∂_x^j z‖²`.
    pub fn hs_norm(&self, t: f64, s: usize, points: usize) -> f64 {
        let h = std::f64::consts::TAU / points as f64;
        let mut acc = 0.0;
        for p in 0..points {
            let (re, im) = self.jets(p as f64 * h, t, 0, s);
            let mut binom = 1.0;
            for j in 0..=s {
                let (dr, di) = (re.derivative(j), im.derivative(j));
                acc += binom * (dr * dr + di * di);
                binom = binom * (s - j) as f64 / (j + 1) as f64;
            }
        }
        (acc / points as f64).sqrt()
    }
}

/// Three-component one-dimensional system with `u = (u, v, w)`, `A0 = (1 + εw) I`,
/// no transport and the rotation `𝓛 = [[0,-1,0],[1,0,0],[0,0,0]]`.
pub fn ode_system(eps: f64, delta: f64) -> SystemSpec {
    let z = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    let rot = array![[z, -one, z], [one, z, z], [z, z, z]];
    let mut slope_w = Array2::zeros((3, 3));
    for i in 0..3 {
        slope_w[[i, i]] = 1.0;
    }
    SystemSpec {
        n: 3,
        d: 1,
        a0: Coefficient::Affine { base: Array2::eye(3), slopes: vec![Array2::zeros((3, 3)), Array2::zeros((3, 3)), slope_w] },
        a: vec![Coefficient::Constant(Array2::zeros((3, 3)))],
        g: None,
        h: HTerm::Zero,
        l: OperatorSymbol::multiplier(rot, 1).expect("skew rotation"),
        m: OperatorSymbol::zero(3, 1),
        eps,
        delta,
        c0: 0.5,
        b0: 0.5,
    }
}

/// The rotation system with Burgers-type transport `A_1 = w I`.
pub fn transported_rotation_system(eps: f64, delta: f64) -> SystemSpec {
    let mut sys = ode_system(eps, delta);
    let mut slope_w = Array2::zeros((3, 3));
    for i in 0..3 {
        slope_w[[i, i]] = 1.0;
    }
    sys.a = vec![Coefficient::Affine { base: Array2::zeros((3, 3)), slopes: vec![Array2::zeros((3, 3)), Array2::zeros((3, 3)), slope_w] }];
    sys
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jet_arithmetic_matches_known_series() {
        let x = Jet::variable(0.3, 5);
        let e = x.exp();
        for k in 0..=5 {
            assert!((e.derivative(k) - 0.3f64.exp()).abs() < 1e-14);
        }
        let (s, c) = x.sin_cos();
        assert!((s.derivative(3) + 0.3f64.cos()).abs() < 1e-14);
        assert!((c.derivative(2) + 0.3f64.cos()).abs() < 1e-14);
        // 1/(1+x) at x = 0.3: k-th derivative = (-1)^k k! / 1.3^{k+1}
        let r = x.add_const(1.0).recip();
        assert!((r.derivative(4) - 24.0 / 1.3f64.powi(5)).abs() < 1e-12);
    }

    #[test]
    fn initial_value_and_modulus() {
        let xs: Vec<f64> = (0..7).map(|i| i as f64).collect();
        let a = |v: f64| 1.0 + v;
        let z = ode_example_exact(0.01, 0.1, &a, &f64::cos, &xs, 0.0);
        assert!(z.iter().all(|v| (v - Complex64::new(0.01, 0.0)).norm() < 1e-17));
        let z = ode_example_exact(0.01, 0.1, &a, &f64::cos, &xs, 3.7);
        assert!(z.iter().all(|v| (v.norm() - 0.01).abs() < 1e-16));
    }

    #[test]
    fn constant_coefficient_is_spatially_uniform() {
        let xs = [0.0, 1.0, 2.5];
        let z = ode_example_exact(0.1, 0.2, &|_v| 1.0, &f64::cos, &xs, 0.4);
        let want = Complex64::from_polar(0.1, -4.0);
        assert!(z.iter().all(|v| (v - want).norm() < 1e-15));
    }

    #[test]
    fn jet_norms_agree_with_finite_differences() {
        let ex = OdeExample { z0: 0.01, delta: 0.01, eps: 0.2, a: &affine_profile, w0: &cos_profile };
        let a = |v: f64| 1.0 + v;
        let n = 4096;
        let h = std::f64::consts::TAU / n as f64;
        let xs: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
        let z = ode_example_exact(0.01, 0.2, &a, &f64::cos, &xs, 1.0);
        let fd: f64 = (0..n)
            .map(|i| {
                let d = (z[(i + 1) % n] - z[(i + n - 1) % n]) / (2.0 * h);
                d.norm_sqr()
            })
            .sum::<f64>()
            / n as f64;
        let jet = ex.derivative_norm(1.0, 0, 1, 256);
        assert!((fd.sqrt() - jet).abs() < 1e-3 * jet, "{} vs {}", fd.sqrt(), jet);
    }

    #[test]
    fn time_derivative_jet_is_phi_power() {
        let ex = OdeExample { z0: 0.05, delta: 0.05, eps: 0.1, a: &affine_profile, w0: &cos_profile };
        // ‖∂_t² z‖ = δ φ² pointwise, φ = 1/(δ(1 + ε cos x))
        let norm = ex.derivative_norm(0.3, 2, 0, 512);
        let want: f64 = ((0..512)
            .map(|p| {
                let x = p as f64 * std::f64::consts::TAU / 512.0;
                let phi = 1.0 / (0.05 * (1.0 + 0.1 * x.cos()));
                (0.05 * phi * phi).powi(2)
            })
            .sum::<f64>()
            / 512.0)
            .sqrt();
        assert!((norm - want).abs() < 1e-10 * want);
    }
}
