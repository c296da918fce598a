//! JSON run reports and their plain-text rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use dmlbench_core::eval::DEFAULT_KS;
use dmlbench_train::trainer::write_atomic;
use dmlbench_train::HistoryEntry;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const REPORT_VERSION: u32 = 1;

/// The JSON Schema every report validates against.
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    /// Stopped early to write a checkpoint.
    Suspended,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub history: Vec<HistoryEntry>,
    /// Only recorded on request, so that reports stay reproducible.
    pub wall_time_seconds: Option<f64>,
    pub seed: u64,
    pub status: RunStatus,
    pub error: Option<String>,
}

impl Report {
    pub fn final_entry(&self) -> Option<&HistoryEntry> {
        self.history.last()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| CliError::Failure(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    /// Writes the JSON report atomically.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes()).map_err(|e| CliError::Failure(e.to_string()))
    }

    /// Recall@{1,2,4,8,16} and NMI per evaluation, one row per step.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let loss = self.config.train.loss.kind();
        let _ = writeln!(out, "loss {loss}, seed {}, embedding {}", self.seed, self.config.train.embedding_dim());
        write_rows(&mut out, self.history.iter().map(|h| (h.step, &h.recall_at, h.nmi)));
        if self.history.iter().any(|h| h.binary.is_some()) {
            let _ = writeln!(out, "\nbinarized (hamming)");
            let rows = self.history.iter().filter_map(|h| h.binary.as_ref().map(|b| (h.step, &b.recall_at, b.nmi)));
            write_rows(&mut out, rows);
        }
        if let Some(e) = &self.error {
            let _ = writeln!(out, "\nerror: {e}");
        }
        out
    }
}

fn write_rows<'a>(out: &mut String, rows: impl Iterator<Item = (u64, &'a BTreeMap<usize, f64>, f64)>) {
    let _ = write!(out, "{:>8}", "step");
    for k in DEFAULT_KS {
        let _ = write!(out, " {:>7}", format!("R@{k}"));
    }
    let _ = writeln!(out, " {:>7}", "NMI");
    for (step, recall, nmi) in rows {
        let _ = write!(out, "{step:>8}");
        for k in DEFAULT_KS {
            match recall.get(&k) {
                Some(r) => {
                    let _ = write!(out, " {:>7.4}", r);
                }
                None => {
                    let _ = write!(out, " {:>7}", "-");
                }
            }
        }
        let _ = writeln!(out, " {nmi:>7.4}");
    }
}
