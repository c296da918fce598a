//! Grids over embedding size, batch size or loss, one run per cell.

use std::path::Path;

use clap::ValueEnum;
use dmlbench_core::eval::DEFAULT_KS;
use dmlbench_train::trainer::write_atomic;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentArgs;
use crate::error::{CliError, Result};
use crate::report::RunStatus;
use crate::run::{run_experiment, RunOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    EmbeddingSize,
    BatchSize,
    Loss,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub base: ExperimentArgs,
    pub axis: SweepAxis,
    pub values: Vec<String>,
    /// Losses run at every axis value (ignored for the loss axis).
    pub losses: Vec<String>,
    /// Give each cell its own seed (`base seed + cell index`).
    pub reseed: bool,
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis_value: String,
    pub loss: String,
    pub seed: u64,
    pub recall_at_1: Option<f64>,
    pub recall_at_2: Option<f64>,
    pub recall_at_4: Option<f64>,
    pub recall_at_8: Option<f64>,
    pub recall_at_16: Option<f64>,
    pub nmi: Option<f64>,
    pub error: String,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(CliError::config("--values: at least one value is required"));
        }
        if self.axis != SweepAxis::Loss && self.losses.is_empty() {
            return Err(CliError::config("--loss: at least one loss is required"));
        }
        for v in &self.values {
            match self.axis {
                SweepAxis::BatchSize => match v.parse::<usize>() {
                    Ok(b) if b >= 2 => {}
                    _ => return Err(CliError::config(format!("--values: batch size `{v}` must be an integer >= 2"))),
                },
                SweepAxis::EmbeddingSize => match v.parse::<usize>() {
                    Ok(d) if d >= 1 => {}
                    _ => {
                        return Err(CliError::config(format!(
                            "--values: embedding size `{v}` must be a positive integer"
                        )))
                    }
                },
                SweepAxis::Loss => {}
            }
        }
        Ok(())
    }

    /// `(axis value, loss, args)` for every cell in output order.
    pub fn cells(&self) -> Vec<(String, String, ExperimentArgs)> {
        let losses = match self.axis {
            SweepAxis::Loss => vec![None],
            _ => self.losses.iter().cloned().map(Some).collect(),
        };
        let mut out = Vec::new();
        for value in &self.values {
            for loss in &losses {
                let mut args = self.base.clone();
                match self.axis {
                    SweepAxis::EmbeddingSize => args.embedding_dim = value.parse().ok(),
                    SweepAxis::BatchSize => args.batch_size = value.parse().unwrap_or(0),
                    SweepAxis::Loss => args.loss = value.clone(),
                }
                if let Some(l) = loss {
                    args.loss = l.clone();
                }
                if self.reseed {
                    args.seed = self.base.seed.wrapping_add(out.len() as u64);
                }
                out.push((value.clone(), args.loss.clone(), args));
            }
        }
        out
    }
}

fn run_cell(value: String, loss: String, args: &ExperimentArgs) -> SweepRow {
    let mut row = SweepRow {
        axis_value: value,
        loss,
        seed: args.seed,
        recall_at_1: None,
        recall_at_2: None,
        recall_at_4: None,
        recall_at_8: None,
        recall_at_16: None,
        nmi: None,
        error: String::new(),
    };
    let report = args.build().and_then(|exp| run_experiment(&exp, None, &RunOptions::default()));
    match report {
        Ok(r) => {
            if r.status == RunStatus::Failed {
                row.error = r.error.clone().unwrap_or_default();
            } else if let Some(last) = r.final_entry() {
                let [r1, r2, r4, r8, r16] = DEFAULT_KS.map(|k| last.recall_at.get(&k).copied());
                (row.recall_at_1, row.recall_at_2, row.recall_at_4, row.recall_at_8, row.recall_at_16) =
                    (r1, r2, r4, r8, r16);
                row.nmi = Some(last.nmi);
            }
        }
        Err(e) => row.error = e.to_string(),
    }
    if !row.error.is_empty() {
        log::warn!("cell {} / {}: {}", row.axis_value, row.loss, row.error);
    }
    row
}

/// Runs every cell on up to `workers` threads; rows come back in cell order
/// regardless of scheduling.
pub fn run_sweep(cfg: &SweepConfig, workers: usize) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let cells = cfg.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Failure(e.to_string()))?;
    Ok(pool.install(|| cells.into_par_iter().map(|(v, l, args)| run_cell(v, l, &args)).collect()))
}

pub fn to_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Failure(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Failure(e.to_string()))
}

pub fn write_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    write_atomic(path, &to_csv(rows)?).map_err(|e| CliError::Failure(e.to_string()))
}
