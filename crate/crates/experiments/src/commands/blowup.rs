//! `blowup`: Sobolev norms of the closed-form rotation solution for `δ = ε^q`.

use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, Result};
use num_rational::Ratio;
use threescale_core::fit::loglog_slope;
use threescale_core::ode::{affine_profile, cos_profile, OdeExample};

use super::{bool_cell, write_timing, RunLog};
use crate::config::{LoadedConfig, Preparation};
use crate::output::{experiment_dir, num, Table};

#[derive(Clone, Debug)]
pub struct BlowupRow {
    pub q: f64,
    pub eps: f64,
    pub delta: f64,
    /// `‖z(t)‖_{H^{s0+1}}`.
    pub hs: f64,
    /// `‖∂_x^{s0+1} z(t)‖_{L²}`.
    pub top: f64,
}

#[derive(Clone, Debug)]
pub struct BlowupFit {
    pub q: Ratio<i64>,
    /// Fitted log-log slope of the top derivative against ε.
    pub slope: f64,
    /// `(s0+1) - q s0` for well-prepared data, `(s0+1)(1-q)` for ill-prepared data.
    pub expected: f64,
    /// Whether the exponent lies in the range where the norm stays bounded.
    pub bounded_regime: bool,
    /// `max/min` of the `H^{s0+1}` norm over the schedule.
    pub variation: f64,
    /// `max / (value at the largest ε)` of the `H^{s0+1}` norm.
    pub growth: f64,
    pub pass: bool,
}

pub struct BlowupOutcome {
    pub s0: usize,
    pub rows: Vec<BlowupRow>,
    pub fits: Vec<BlowupFit>,
    pub log: RunLog,
}

pub fn run(cfg: &LoadedConfig, out: &Path) -> Result<BlowupOutcome> {
    let start = Instant::now();
    let c = &cfg.config;
    let bc = c.blowup.as_ref().ok_or_else(|| anyhow!("missing [blowup]"))?;
    let tol = &c.tolerances;
    let s0 = bc.dimension / 2 + 1;
    let s = s0 + 1;
    let s0r = Ratio::from_integer(s0 as i64);
    let one = Ratio::from_integer(1);

    let mut rows = Vec::new();
    let mut fits = Vec::new();
    let mut log = RunLog::default();
    for qe in &bc.q {
        let q = qe.ratio()?;
        let qf = *q.numer() as f64 / *q.denom() as f64;
        let (expected, bounded_regime) = match bc.preparation {
            Preparation::Well => ((s0 + 1) as f64 - qf * s0 as f64, q <= one + one / s0r),
            Preparation::Ill => ((s0 + 1) as f64 * (1.0 - qf), q <= one),
        };
        let mut group = Vec::new();
        for &eps in &c.eps {
            let delta = eps.powf(qf);
            let z0 = match bc.preparation {
                Preparation::Well => delta,
                Preparation::Ill => 1.0,
            };
            let ex = OdeExample { z0, delta, eps, a: &affine_profile, w0: &cos_profile };
            group.push(BlowupRow {
                q: qf,
                eps,
                delta,
                hs: ex.hs_norm(bc.t, s, bc.quadrature_points),
                top: ex.derivative_norm(bc.t, 0, s, bc.quadrature_points),
            });
        }
        let xs: Vec<f64> = group.iter().map(|r| r.eps).collect();
        let tops: Vec<f64> = group.iter().map(|r| r.top).collect();
        let slope = loglog_slope(&xs, &tops).unwrap_or(f64::NAN);
        let hs_max = group.iter().map(|r| r.hs).fold(0.0, f64::max);
        let hs_min = group.iter().map(|r| r.hs).fold(f64::INFINITY, f64::min);
        let variation = hs_max / hs_min;
        let growth = hs_max / group[0].hs;
        let pass = if bounded_regime { growth <= tol.bounded_ratio } else { (slope - expected).abs() <= tol.slope };
        if !pass {
            if bounded_regime {
                log.flag(format!("q = {q}: H^{s} norm grows by {growth:.3} over the schedule (allowed {})", tol.bounded_ratio));
            } else {
                log.flag(format!("q = {q}: slope {slope:.4} differs from {expected:.4} by more than {}", tol.slope));
            }
        }
        fits.push(BlowupFit { q, slope, expected, bounded_regime, variation, growth, pass });
        rows.extend(group);
    }

    let dir = experiment_dir(out, cfg);
    let mut t = Table::new(&["q", "eps", "delta", "hs_norm", "top_derivative_norm"]);
    t.note(format!("s0 = {s0}, norm index s0+1 = {s}, t = {}, preparation = {:?}", bc.t, bc.preparation));
    for r in &rows {
        t.push(vec![num(r.q), num(r.eps), num(r.delta), num(r.hs), num(r.top)]);
    }
    log.write(&t, cfg, dir.join("norms.csv"))?;
    let mut f = Table::new(&["q", "slope", "expected_slope", "bounded_regime", "variation", "growth", "pass"]);
    for r in &fits {
        f.push(vec![
            r.q.to_string(),
            num(r.slope),
            num(r.expected),
            bool_cell(r.bounded_regime),
            num(r.variation),
            num(r.growth),
            bool_cell(r.pass),
        ]);
    }
    log.write(&f, cfg, dir.join("fits.csv"))?;
    write_timing(&mut log, cfg, &dir, &[("all".to_string(), start.elapsed().as_secs_f64())])?;
    Ok(BlowupOutcome { s0, rows, fits, log })
}
