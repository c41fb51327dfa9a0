//! `normwatch`: the weighted norm `||||u||||_{s0+1,ε,A0}` along quasilinear runs.

use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, Result};
use rayon::prelude::*;
use threescale_core::solver::{Context, NormRow, NormWeights, StepPolicy};

use super::{bool_cell, write_timing, RunLog};
use crate::config::{LoadedConfig, Reference};
use crate::output::{experiment_dir, num, param_tag, Table};
use crate::setup;

#[derive(Clone, Debug)]
pub struct NormRun {
    pub eps: f64,
    pub delta: f64,
    pub rows: Vec<NormRow>,
    /// Reference level `M`.
    pub m: f64,
    pub max_quad: f64,
    pub held_2m: bool,
    /// Set when the integrator stopped early; holds the error message.
    pub truncated: Option<String>,
    pub steps: usize,
    pub runtime: f64,
}

/// Terminal error of fixed-step RK4 at `dt` and `dt/2` against a run at `dt/8`.
#[derive(Clone, Debug)]
pub struct Halving {
    pub eps: f64,
    pub dt: f64,
    pub error_dt: f64,
    pub error_half: f64,
    pub ratio: f64,
}

pub struct NormwatchOutcome {
    pub runs: Vec<NormRun>,
    pub halving: Vec<Halving>,
    pub log: RunLog,
}

fn one_run(cfg: &LoadedConfig, eps: f64) -> Result<NormRun> {
    let start = Instant::now();
    let c = &cfg.config;
    let nw = c.normwatch.as_ref();
    let s0 = nw.map(|n| n.s0).unwrap_or(1);
    let weights = if nw.is_some_and(|n| n.full_weights) { NormWeights::Full } else { NormWeights::Simplified };
    let delta = c.delta.as_ref().ok_or_else(|| anyhow!("missing [delta]"))?.delta(eps)?;
    let t_end = c.t_end.ok_or_else(|| anyhow!("missing t_end"))?;
    let grid = setup::grid(cfg)?;
    let sys = setup::system(cfg, eps, delta)?;
    let init = setup::initial(cfg, &sys, &grid)?;
    // finite-difference time derivatives need samples at most δ/4 apart
    let spacing = c.output_interval.map_or(delta / 4.0, |h| h.min(delta / 4.0));
    let policy = StepPolicy { dealias: c.dealias, output_interval: Some(spacing), ..Default::default() };
    let ctx = Context::new(&sys, &grid)?;
    let (rows, truncated, steps) = match ctx.simulate(&init.u0, t_end, &policy) {
        Ok(traj) => (ctx.norm_report(&traj, s0, weights)?, None, traj.steps),
        Err(e) => {
            log::warn!("run at ε = {eps} stopped: {e}");
            // keep the measured initial level so the run still shows up in the summary
            let short = StepPolicy { output_interval: Some(spacing), ..policy.clone() };
            let head = ctx.simulate(&init.u0, (4.0 * spacing).min(t_end), &short).ok();
            let rows = match head {
                Some(h) => ctx.norm_report(&h, s0, weights)?.into_iter().take(1).collect(),
                None => Vec::new(),
            };
            (rows, Some(e.to_string()), 0)
        }
    };
    let m = rows.first().map_or(f64::NAN, |r| r.quad);
    let max_quad = rows.iter().map(|r| r.quad).fold(0.0, f64::max);
    Ok(NormRun { eps, delta, rows, m, max_quad, held_2m: false, truncated, steps, runtime: start.elapsed().as_secs_f64() })
}

fn halving(cfg: &LoadedConfig, eps: f64) -> Result<Halving> {
    let c = &cfg.config;
    let nw = c.normwatch.as_ref().ok_or_else(|| anyhow!("missing [normwatch]"))?;
    let delta = c.delta.as_ref().ok_or_else(|| anyhow!("missing [delta]"))?.delta(eps)?;
    let t_end = c.t_end.ok_or_else(|| anyhow!("missing t_end"))?;
    let grid = setup::grid(cfg)?;
    let sys = setup::system(cfg, eps, delta)?;
    let init = setup::initial(cfg, &sys, &grid)?;
    let ctx = Context::new(&sys, &grid)?;
    let dt = nw.dt_factor * delta;
    let terminal = |h: f64| -> Result<_> {
        let policy = StepPolicy { fixed_dt: Some(h), dealias: c.dealias, output_interval: None, ..Default::default() };
        let traj = ctx.simulate(&init.u0, t_end, &policy)?;
        Ok(traj.states.last().cloned().expect("trajectory has a final state"))
    };
    let (coarse, (half, reference)) = rayon::join(|| terminal(dt), || rayon::join(|| terminal(dt / 2.0), || terminal(dt / 8.0)));
    let (coarse, half, reference) = (coarse?, half?, reference?);
    let err = |s: &threescale_core::grid::SpectralState| {
        let mut d = s.clone();
        d.scaled_add(-1.0, &reference);
        d.l2_norm()
    };
    let (error_dt, error_half) = (err(&coarse), err(&half));
    Ok(Halving { eps, dt, error_dt, error_half, ratio: error_dt / error_half })
}

pub fn run(cfg: &LoadedConfig, out: &Path) -> Result<NormwatchOutcome> {
    let c = &cfg.config;
    let tol = &c.tolerances;
    let reference = c.normwatch.as_ref().map(|n| n.reference).unwrap_or_default();
    let mut runs = c.eps.par_iter().map(|&eps| one_run(cfg, eps)).collect::<Result<Vec<_>>>()?;
    let first_m = runs.first().map_or(f64::NAN, |r| r.m);
    for r in &mut runs {
        if reference == Reference::FirstRun {
            r.m = first_m;
        }
        r.held_2m = r.truncated.is_none() && r.max_quad <= tol.norm_factor * r.m;
    }
    let halving = if c.normwatch.as_ref().is_some_and(|n| n.dt_halving) {
        c.eps.par_iter().map(|&eps| halving(cfg, eps)).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };

    let dir = experiment_dir(out, cfg);
    let mut log = RunLog::default();
    for r in &runs {
        let levels = r.rows.first().map_or(0, |row| row.hs.len());
        let mut cols: Vec<String> = vec!["t".into()];
        cols.extend((0..levels).map(|l| format!("h{l}")));
        cols.extend(["ut_l2", "ut_a0", "triple", "quad", "full", "held_2M"].map(String::from));
        let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
        let mut t = Table::new(&col_refs);
        t.note(format!("eps = {:e}, delta = {:e}, M = {:e}, reference = {:?}", r.eps, r.delta, r.m, reference));
        if let Some(msg) = &r.truncated {
            t.note(format!("truncated run: {msg}"));
        }
        let mut held = true;
        for row in &r.rows {
            held &= row.quad <= tol.norm_factor * r.m;
            let mut cells = vec![num(row.t)];
            cells.extend(row.hs.iter().map(|v| num(*v)));
            cells.extend([num(row.ut_l2), num(row.ut_a0), num(row.triple), num(row.quad)]);
            cells.push(row.full.map(num).unwrap_or_default());
            cells.push(bool_cell(held));
            t.push(cells);
        }
        log.write(&t, cfg, dir.join(format!("run_{}.csv", param_tag(r.eps, r.delta))))?;
    }

    let mut summary = Table::new(&["eps", "delta", "M", "max_quad", "ratio", "held_2M", "truncated", "steps"]);
    for r in &runs {
        if !r.held_2m {
            log.flag(format!("ε = {}: max norm {:e} vs 2M bound {:e}{}", r.eps, r.max_quad, tol.norm_factor * r.m, if r.truncated.is_some() { " (truncated)" } else { "" }));
        }
        summary.push(vec![
            num(r.eps),
            num(r.delta),
            num(r.m),
            num(r.max_quad),
            num(r.max_quad / r.m),
            bool_cell(r.held_2m),
            bool_cell(r.truncated.is_some()),
            r.steps.to_string(),
        ]);
    }
    log.write(&summary, cfg, dir.join("summary.csv"))?;

    if !halving.is_empty() {
        let mut t = Table::new(&["eps", "dt", "error_dt", "error_half_dt", "ratio"]);
        t.note("terminal L2 error against a run at dt/8");
        for h in &halving {
            if !(h.ratio >= tol.dt_halving) {
                log.flag(format!("ε = {}: halving dt reduced the terminal error only {:.2}x", h.eps, h.ratio));
            }
            t.push(vec![num(h.eps), num(h.dt), num(h.error_dt), num(h.error_half), num(h.ratio)]);
        }
        log.write(&t, cfg, dir.join("dt_halving.csv"))?;
    }
    let timing: Vec<(String, f64)> = runs.iter().map(|r| (param_tag(r.eps, r.delta), r.runtime)).collect();
    write_timing(&mut log, cfg, &dir, &timing)?;
    Ok(NormwatchOutcome { runs, halving, log })
}
