//! RK4 on the rotation systems against the closed-form solution.

use ndarray::Array2;
use threescale_core::grid::{GridSpec, Transforms};
use threescale_core::ode::{ode_solution, ode_system, transported_rotation_system};
use threescale_core::solver::{Context, StepPolicy};

fn rotation_data(grid: &GridSpec, delta: f64) -> Array2<f64> {
    let mut f = Array2::zeros((3, grid.num_points()));
    for p in 0..grid.num_points() {
        f[[0, p]] = delta;
        f[[2, p]] = grid.node(p)[0].cos();
    }
    f
}

#[test]
fn rk4_at_hundredth_of_delta_tracks_the_exact_rotation() {
    let (eps, delta, t_end) = (0.1, 0.01, 0.2);
    let grid = GridSpec::new(1, 32).unwrap();
    let sys = ode_system(eps, delta);
    let ctx = Context::new(&sys, &grid).unwrap();
    let tr = Transforms::new(grid);
    let u0 = tr.to_spectral(&rotation_data(&grid, delta)).unwrap();
    // no transport, so the collocated system is the pointwise ODE and dealiasing would only add error
    let policy = StepPolicy { fixed_dt: Some(delta / 100.0), dealias: false, ..Default::default() };
    let traj = ctx.simulate(&u0, t_end, &policy).unwrap();
    assert!(!traj.exact);
    let end = tr.to_physical(traj.states.last().unwrap());

    let xs: Vec<f64> = (0..grid.num_points()).map(|p| grid.node(p)[0]).collect();
    let a = |v: f64| 1.0 + v;
    let exact = ode_solution(delta, delta, eps, &a, &f64::cos, &xs, t_end);
    let mut worst: f64 = 0.0;
    for (p, z) in exact.iter().enumerate() {
        worst = worst.max((end[[0, p]] - z.re).abs()).max((end[[1, p]] - z.im).abs());
        assert!((end[[2, p]] - xs[p].cos()).abs() < 1e-12);
    }
    assert!(worst < 1e-6, "max nodal error {worst:e}");
}

#[test]
fn rotation_keeps_the_weighted_energy() {
    // |z|² is conserved pointwise, hence the L² norm of (u, v) is conserved
    let (eps, delta) = (0.1, 0.01);
    let grid = GridSpec::new(1, 32).unwrap();
    let ctx = Context::new(&ode_system(eps, delta), &grid).unwrap();
    let tr = Transforms::new(grid);
    let u0 = tr.to_spectral(&rotation_data(&grid, delta)).unwrap();
    let policy = StepPolicy { fixed_dt: Some(delta / 50.0), dealias: false, output_interval: Some(0.05), ..Default::default() };
    let traj = ctx.simulate(&u0, 0.2, &policy).unwrap();
    for s in &traj.states {
        let phys = tr.to_physical(s);
        for p in 0..grid.num_points() {
            let r = (phys[[0, p]].powi(2) + phys[[1, p]].powi(2)).sqrt();
            assert!((r - delta).abs() < 1e-9 * delta, "modulus {r} at node {p}");
        }
    }
}

#[test]
fn dealiased_transport_stays_in_band_and_real() {
    let (eps, delta) = (0.1, 0.01);
    let grid = GridSpec::new(1, 32).unwrap();
    let ctx = Context::new(&transported_rotation_system(eps, delta), &grid).unwrap();
    let tr = Transforms::new(grid);
    let mut u0 = tr.to_spectral(&rotation_data(&grid, delta)).unwrap();
    u0.truncate_band(&grid);
    let policy = StepPolicy { dealias: true, output_interval: Some(0.05), ..Default::default() };
    let traj = ctx.simulate(&u0, 0.1, &policy).unwrap();
    for s in &traj.states {
        assert!(s.hermitian_defect(&grid) < 1e-12);
        for idx in 0..grid.num_points() {
            if !grid.in_dealiased_band(idx) {
                for comp in 0..3 {
                    assert_eq!(s.coeffs[[comp, idx]].norm(), 0.0, "mode {:?} leaked", grid.wavevector(idx));
                }
            }
        }
    }
}
