//! `reduce`: reduction tables per Fourier mode and the random-pencil suite.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use threescale_core::linalg::CMatrix;
use threescale_core::reduction::{order_report_with, OrderReport, ReductionOutput};
use threescale_core::symbols::{limit_with_reduction, mode_pair, ModeLimit, ScalingRegime};

use super::{bool_cell, write_timing, RunLog};
use crate::config::LoadedConfig;
use crate::ensemble::{self, Member, SuiteRow, SUITE_ORDER};
use crate::output::{experiment_dir, num, Table};
use crate::setup;

pub struct ModeResult {
    pub k: Vec<i64>,
    pub reduction: ReductionOutput,
    pub limit: ModeLimit,
    pub report: OrderReport,
}

pub struct ReduceOutcome {
    pub modes: Vec<ModeResult>,
    pub suite: Vec<(Member, SuiteRow)>,
    pub log: RunLog,
}

fn mode_tag(k: &[i64]) -> String {
    let parts: Vec<String> = k.iter().map(|v| if *v < 0 { format!("m{}", -v) } else { v.to_string() }).collect();
    format!("k{}", parts.join("_"))
}

fn k_cell(k: &[i64]) -> String {
    k.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn push_matrix(t: &mut Table, block: &str, j: Option<usize>, m: &CMatrix) {
    for ((r, c), z) in m.indexed_iter() {
        t.push(vec![
            block.to_string(),
            j.map(|j| j.to_string()).unwrap_or_default(),
            r.to_string(),
            c.to_string(),
            num(z.re),
            num(z.im),
        ]);
    }
}

pub fn run(cfg: &LoadedConfig, out: &Path) -> Result<ReduceOutcome> {
    let rc = cfg.config.reduce.as_ref().ok_or_else(|| anyhow!("missing [reduce]"))?;
    let tau = cfg.config.tolerances.tau_rank;
    let dir = experiment_dir(out, cfg);
    let mut log = RunLog::default();
    let mut timing = Vec::new();

    let mut modes = Vec::new();
    if !rc.modes.is_empty() {
        let start = std::time::Instant::now();
        let (l, m) = setup::symbols(cfg)?;
        let regime: ScalingRegime = cfg.config.regime.ok_or_else(|| anyhow!("missing [regime]"))?.into();
        for k in &rc.modes {
            if k.len() != l.d {
                bail!("mode {k:?} has {} entries, the symbols live in dimension {}", k.len(), l.d);
            }
        }
        modes = rc
            .modes
            .par_iter()
            .map(|k| -> Result<ModeResult> {
                let (limit, reduction) =
                    limit_with_reduction(&l, &m, regime, k, tau).with_context(|| format!("reduction at mode {k:?}"))?;
                let pair = mode_pair(&l, &m, k).with_context(|| format!("mode {k:?}"))?;
                let report = order_report_with(&pair, &reduction, &rc.mu).with_context(|| format!("order report at mode {k:?}"))?;
                Ok(ModeResult { k: k.clone(), reduction, limit, report })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut order = Table::new(&["k", "mu", "b1", "b2", "e", "commutation", "projection_gap", "cluster_rank", "degenerate"]);
        let mut summary = Table::new(&["k", "p", "level_ranks", "e_slope", "e_monotone"]);
        for res in &modes {
            let mut t = Table::new(&["block", "j", "row", "col", "re", "im"]);
            t.note(format!("mode k = ({}), reduction order p = {}", k_cell(&res.k), res.reduction.p));
            for (j, lvl) in res.reduction.levels.iter().enumerate() {
                push_matrix(&mut t, "P", Some(j), &lvl.p);
                push_matrix(&mut t, "T", Some(j), &lvl.t);
            }
            push_matrix(&mut t, "T_pp", Some(res.reduction.p), &res.reduction.tpp);
            push_matrix(&mut t, "P0_limit", None, &res.limit.p_hat);
            push_matrix(&mut t, "T_lim", None, &res.limit.tlim_hat);
            log.write(&t, cfg, dir.join(format!("mode_{}.csv", mode_tag(&res.k))))?;

            for r in &res.report.rows {
                order.push(vec![
                    k_cell(&res.k),
                    num(r.mu),
                    num(r.b1),
                    r.b2.map(num).unwrap_or_default(),
                    num(r.e),
                    num(r.commutation),
                    num(r.projection_gap),
                    r.cluster_rank.to_string(),
                    bool_cell(r.degenerate),
                ]);
                if r.degenerate {
                    log.flag(format!("mode ({}): an eigenvalue sits on the cluster threshold at μ = {:e}", k_cell(&res.k), r.mu));
                }
            }
            let ranks: Vec<String> = res
                .reduction
                .levels
                .iter()
                .map(|lvl| (lvl.p.nrows() as f64 - lvl.p.diag().iter().map(|z| z.re).sum::<f64>()).round().to_string())
                .collect();
            let monotone = !res.report.e_non_monotone;
            if !monotone {
                let seq: Vec<String> = res.report.rows.iter().map(|r| format!("{:e}", r.e)).collect();
                log.flag(format!("mode ({}): e(μ) not decreasing: [{}]", k_cell(&res.k), seq.join(", ")));
            }
            summary.push(vec![
                k_cell(&res.k),
                res.reduction.p.to_string(),
                ranks.join(" "),
                res.report.e_slope().map(num).unwrap_or_default(),
                bool_cell(monotone),
            ]);
        }
        log.write(&order, cfg, dir.join("order_report.csv"))?;
        log.write(&summary, cfg, dir.join("modes.csv"))?;
        timing.push(("modes".to_string(), start.elapsed().as_secs_f64()));
    }

    let mut suite = Vec::new();
    if let Some(rs) = &rc.random {
        let start = std::time::Instant::now();
        let members = ensemble::generate(rs.count, rs.seed, tau)?;
        let rows = members.par_iter().map(|m| ensemble::evaluate(m, &rc.mu, tau)).collect::<Result<Vec<_>>>()?;
        let mut t = Table::new(&[
            "id",
            "dim",
            "rejected_before",
            "matches",
            "max_match_ratio",
            "max_commutation",
            "e_slope",
            "e_monotone",
            "b1_variation",
            "min_mu_b2",
            "b2_floor",
            "degenerate",
            "eigen_oracle_pass",
            "projection_bounds_pass",
        ]);
        t.note(format!("seed = {}, reduction order p = {SUITE_ORDER}", rs.seed));
        let mut pairs = Table::new(&["id", "block", "row", "col", "re", "im"]);
        for (m, r) in members.iter().zip(&rows) {
            t.push(vec![
                r.id.to_string(),
                r.dim.to_string(),
                m.rejected.to_string(),
                r.matches.to_string(),
                num(r.max_match_ratio),
                num(r.max_commutation),
                num(r.e_slope),
                bool_cell(r.e_monotone),
                num(r.b1_variation),
                num(r.min_mu_b2),
                num(r.b2_floor),
                bool_cell(r.degenerate),
                bool_cell(r.eigen_oracle_pass()),
                bool_cell(r.projection_bounds_pass()),
            ]);
            for (name, mat) in [("T00", &m.pair.t00), ("T01", &m.pair.t01)] {
                for ((i, j), z) in mat.indexed_iter() {
                    pairs.push(vec![m.id.to_string(), name.to_string(), i.to_string(), j.to_string(), num(z.re), num(z.im)]);
                }
            }
            if !r.eigen_oracle_pass() {
                log.flag(format!(
                    "suite member {}: eigen oracle (match ratio {:.3}, commutation {:.2e}, slope {:.3}, monotone {})",
                    r.id, r.max_match_ratio, r.max_commutation, r.e_slope, r.e_monotone
                ));
            }
            if !r.projection_bounds_pass() {
                log.flag(format!(
                    "suite member {}: projection bounds (b1 variation {:.3}, min μ·b2 {:.3e} vs floor {:.3e})",
                    r.id, r.b1_variation, r.min_mu_b2, r.b2_floor
                ));
            }
        }
        log.write(&t, cfg, dir.join("suite.csv"))?;
        log.write(&pairs, cfg, dir.join("suite_pairs.csv"))?;
        suite = members.into_iter().zip(rows).collect();
        timing.push(("suite".to_string(), start.elapsed().as_secs_f64()));
    }

    write_timing(&mut log, cfg, &dir, &timing)?;
    Ok(ReduceOutcome { modes, suite, log })
}
