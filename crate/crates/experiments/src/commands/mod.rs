//! The four experiment subcommands. Each returns a structured outcome and
//! writes its CSV files; `flags` lists failed assertions (exit code 2).

pub mod blowup;
pub mod converge;
pub mod normwatch;
pub mod reduce;

use std::path::{Path, PathBuf};

use anyhow::Result;

use crate::config::{ExperimentKind, LoadedConfig};
use crate::output::{num, Table};

/// Files written and assertion flags raised by one command.
#[derive(Clone, Debug, Default)]
pub struct RunLog {
    pub written: Vec<PathBuf>,
    pub flags: Vec<String>,
}

impl RunLog {
    pub fn flag(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        log::warn!("assertion flag: {msg}");
        self.flags.push(msg);
    }

    pub fn write(&mut self, table: &Table, cfg: &LoadedConfig, path: PathBuf) -> Result<()> {
        table.write(cfg, &path)?;
        self.written.push(path);
        Ok(())
    }
}

/// Wall-clock times go to their own file so every other CSV is reproducible byte for byte.
pub(crate) fn write_timing(log: &mut RunLog, cfg: &LoadedConfig, dir: &Path, rows: &[(String, f64)]) -> Result<()> {
    let mut t = Table::new(&["run", "seconds"]);
    for (name, secs) in rows {
        t.push(vec![name.clone(), num(*secs)]);
    }
    log.write(&t, cfg, dir.join("timing.csv"))
}

/// Run whichever experiment the configuration names.
pub fn run(cfg: &LoadedConfig, out: &Path) -> Result<RunLog> {
    Ok(match cfg.config.experiment {
        ExperimentKind::Reduce => reduce::run(cfg, out)?.log,
        ExperimentKind::Converge => converge::run(cfg, out)?.log,
        ExperimentKind::Blowup => blowup::run(cfg, out)?.log,
        ExperimentKind::Normwatch => normwatch::run(cfg, out)?.log,
    })
}

pub(crate) fn bool_cell(b: bool) -> String {
    if b { "true" } else { "false" }.to_string()
}
