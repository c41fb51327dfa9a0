//! CSV output with provenance headers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::config::LoadedConfig;

/// Fixed-width float formatting used in every CSV cell.
pub fn num(v: f64) -> String {
    format!("{v:.17e}")
}

/// Short fixed-decimal tag used in file names, e.g. `eps0.0500_delta0.002500`.
pub fn param_tag(eps: f64, delta: f64) -> String {
    format!("eps{eps:.6}_delta{delta:.10}")
}

pub struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
    notes: Vec<String>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|s| s.to_string()).collect(), rows: Vec::new(), notes: Vec::new() }
    }

    pub fn note(&mut self, line: impl Into<String>) {
        self.notes.push(line.into());
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self, cfg: &LoadedConfig) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# config_sha256={}", cfg.sha256);
        let _ = writeln!(out, "# tolerances: {}", cfg.config.tolerances.describe());
        for n in &self.notes {
            let _ = writeln!(out, "# {n}");
        }
        let _ = writeln!(out, "{}", self.columns.join(","));
        for r in &self.rows {
            let _ = writeln!(out, "{}", r.join(","));
        }
        out
    }

    pub fn write(&self, cfg: &LoadedConfig, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        std::fs::write(path, self.render(cfg)).with_context(|| format!("writing {}", path.display()))
    }
}

/// `<out>/<experiment>/` for a config.
pub fn experiment_dir(out: &Path, cfg: &LoadedConfig) -> PathBuf {
    out.join(cfg.config.experiment.dir_name())
}
