//! `converge`: full runs against limit runs down an ε schedule.

use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, bail, Context as _, Result};
use rayon::prelude::*;
use threescale_core::grid::SpectralState;
use threescale_core::limit::{directional_limit_exact, directional_mode_exact, LimitSystem};
use threescale_core::solver::{Context, StepPolicy, Trajectory};
use threescale_core::symbols::{wellprep_residual, ScalingRegime};

use super::{bool_cell, write_timing, RunLog};
use crate::config::{LoadedConfig, SystemConfig};
use crate::output::{experiment_dir, num, param_tag, Table};
use crate::setup;

#[derive(Clone, Debug)]
pub struct ConvergeRow {
    pub eps: f64,
    pub delta: f64,
    /// `sup_t ‖u - U‖_{L²}` over the output times.
    pub e_sup: f64,
    /// `‖δ⁻¹𝓛u0 + ε⁻¹𝓜u0‖_{H¹}` of the prepared data.
    pub wellprep_residual: f64,
    /// Largest mode-wise deviation from the closed-form dispersion, relative to the largest datum coefficient.
    pub dispersion_error: Option<f64>,
    /// Largest mode-wise deviation of the limit run from the limit closed form (modes with `k ≠ 0`).
    pub limit_error: Option<f64>,
    pub runtime: f64,
    pub history: Vec<(f64, f64, f64, f64)>,
}

pub struct ConvergeOutcome {
    pub rows: Vec<ConvergeRow>,
    pub strictly_decreasing: bool,
    /// `E(ε_last) / E(ε_first)`.
    pub contraction: Option<f64>,
    pub log: RunLog,
}

fn max_coeff(s: &SpectralState) -> f64 {
    s.coeffs.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn dispersion_error(traj: &Trajectory, u0: &SpectralState, grid: &threescale_core::grid::GridSpec, eps: f64) -> f64 {
    let scale = max_coeff(u0).max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for (t, state) in traj.times.iter().zip(&traj.states) {
        for idx in 0..grid.num_points() {
            let k = grid.wavevector(idx);
            let (u, v) = directional_mode_exact(u0.coeffs[[0, idx]], u0.coeffs[[1, idx]], *t, k[0], k[1], eps);
            worst = worst.max((state.coeffs[[0, idx]] - u).norm()).max((state.coeffs[[1, idx]] - v).norm());
        }
    }
    worst / scale
}

fn limit_error(traj: &Trajectory, profile: &SpectralState, u00: &SpectralState, grid: &threescale_core::grid::GridSpec) -> Result<f64> {
    let scale = max_coeff(u00).max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for (t, state) in traj.times.iter().zip(&traj.states) {
        for idx in 0..grid.num_points() {
            let k = grid.wavevector(idx);
            if k[0] == 0 {
                continue;
            }
            let v = directional_limit_exact(profile.coeffs[[0, idx]], *t, k[0], k[1])?;
            worst = worst.max(state.coeffs[[0, idx]].norm()).max((state.coeffs[[1, idx]] - v).norm());
        }
    }
    Ok(worst / scale)
}

fn one_run(cfg: &LoadedConfig, eps: f64) -> Result<ConvergeRow> {
    let start = Instant::now();
    let c = &cfg.config;
    let delta = c.delta.as_ref().ok_or_else(|| anyhow!("missing [delta]"))?.delta(eps)?;
    let t_end = c.t_end.ok_or_else(|| anyhow!("missing t_end"))?;
    let regime: ScalingRegime = c.regime.ok_or_else(|| anyhow!("missing [regime]"))?.into();
    let grid = setup::grid(cfg)?;
    let sys = setup::system(cfg, eps, delta)?;
    let init = setup::initial(cfg, &sys, &grid)?;
    let policy = StepPolicy { dealias: c.dealias, output_interval: c.output_interval, ..Default::default() };

    let ctx = Context::new(&sys, &grid)?;
    let full = ctx.simulate(&init.u0, t_end, &policy).with_context(|| format!("full run at ε = {eps}"))?;
    let lim = LimitSystem::new(&sys, regime, &grid, c.tolerances.tau_rank)?;
    let limit = lim.solve(&init.u00, t_end, &policy).with_context(|| format!("limit run at ε = {eps}"))?;
    if full.times.len() != limit.times.len() {
        bail!("full and limit runs sampled at different times");
    }

    let mut history = Vec::with_capacity(full.times.len());
    let mut e_sup: f64 = 0.0;
    for ((t, u), uu) in full.times.iter().zip(&full.states).zip(&limit.states) {
        let mut diff = u.clone();
        diff.scaled_add(-1.0, uu);
        let d = diff.l2_norm();
        e_sup = e_sup.max(d);
        history.push((*t, u.l2_norm(), uu.l2_norm(), d));
    }

    // the closed forms are written for δ = ε², i.e. matched rates with s = 1, C = 1
    let directional = matches!(c.system, Some(SystemConfig::Directional))
        && matches!(regime, ScalingRegime::RateMatch { s: 1, c } if c == 1.0);
    let dispersion = directional.then(|| dispersion_error(&full, &init.u0, &grid, eps));
    let limit_err = match (&init.profile, directional) {
        (Some(f), true) => Some(limit_error(&limit, f, &init.u00, &grid)?),
        _ => None,
    };
    let residual = wellprep_residual(&init.u0, &sys.l, &sys.m, &grid, delta, eps, 1)?;
    Ok(ConvergeRow {
        eps,
        delta,
        e_sup,
        wellprep_residual: residual,
        dispersion_error: dispersion,
        limit_error: limit_err,
        runtime: start.elapsed().as_secs_f64(),
        history,
    })
}

pub fn run(cfg: &LoadedConfig, out: &Path) -> Result<ConvergeOutcome> {
    let c = &cfg.config;
    let tol = &c.tolerances;
    let rows = c.eps.par_iter().map(|&eps| one_run(cfg, eps)).collect::<Result<Vec<_>>>()?;

    let dir = experiment_dir(out, cfg);
    let mut log = RunLog::default();
    for r in &rows {
        let mut t = Table::new(&["t", "norm_u", "norm_limit", "norm_difference"]);
        t.note(format!("eps = {:e}, delta = {:e}", r.eps, r.delta));
        for (time, nu, nl, d) in &r.history {
            t.push(vec![num(*time), num(*nu), num(*nl), num(*d)]);
        }
        log.write(&t, cfg, dir.join(format!("run_{}.csv", param_tag(r.eps, r.delta))))?;
    }

    let strictly_decreasing = rows.windows(2).all(|w| w[1].e_sup < w[0].e_sup);
    let contraction = (rows.len() >= 2).then(|| rows.last().unwrap().e_sup / rows[0].e_sup);
    let seq: Vec<String> = rows.iter().map(|r| format!("{:e}", r.e_sup)).collect();
    if !strictly_decreasing {
        log.flag(format!("E(ε) not strictly decreasing: [{}]", seq.join(", ")));
    }
    if let Some(ratio) = contraction {
        if ratio > tol.contraction {
            log.flag(format!("E(ε_last)/E(ε_first) = {ratio:.4} exceeds {}", tol.contraction));
        }
    }
    for r in &rows {
        if let Some(e) = r.dispersion_error {
            if e > tol.dispersion_oracle {
                log.flag(format!("ε = {}: dispersion oracle deviation {e:.3e} exceeds {:e}", r.eps, tol.dispersion_oracle));
            }
        }
        if let Some(e) = r.limit_error {
            if e > tol.limit_oracle {
                log.flag(format!("ε = {}: limit oracle deviation {e:.3e} exceeds {:e}", r.eps, tol.limit_oracle));
            }
        }
    }

    let mut summary = Table::new(&["eps", "delta", "E", "wellprep_residual", "dispersion_error", "limit_error", "decreasing_so_far"]);
    summary.note(format!("E sequence: [{}]", seq.join(", ")));
    if let Some(ratio) = contraction {
        summary.note(format!("contraction E(last)/E(first) = {ratio:e}"));
    }
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    for (i, r) in rows.iter().enumerate() {
        let ok = i == 0 || r.e_sup < rows[i - 1].e_sup;
        summary.push(vec![
            num(r.eps),
            num(r.delta),
            num(r.e_sup),
            num(r.wellprep_residual),
            opt(r.dispersion_error),
            opt(r.limit_error),
            bool_cell(ok),
        ]);
    }
    log.write(&summary, cfg, dir.join("summary.csv"))?;
    let timing: Vec<(String, f64)> = rows.iter().map(|r| (param_tag(r.eps, r.delta), r.runtime)).collect();
    write_timing(&mut log, cfg, &dir, &timing)?;
    Ok(ConvergeOutcome { rows, strictly_decreasing, contraction, log })
}
