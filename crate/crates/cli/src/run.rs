//! Single experiments: training, checkpoints and report assembly.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dmlbench_train::trainer::write_atomic;
use dmlbench_train::{init_run, train_until, RunState};
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::report::{Report, RunStatus, REPORT_VERSION};

pub const CHECKPOINT_VERSION: u32 = 1;

/// A resumable run: the experiment that produced it and the full training
/// state (parameters, optimizer moments, rng positions, history).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub experiment: ExperimentConfig,
    pub run: RunState,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec(self).map_err(|e| CliError::Failure(e.to_string()))?;
        write_atomic(path, &bytes).map_err(|e| CliError::Failure(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let cp: Checkpoint = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::config(format!("{}: not a checkpoint ({e})", path.display())))?;
        if cp.schema_version != CHECKPOINT_VERSION {
            return Err(CliError::config(format!(
                "{}: checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                path.display(),
                cp.schema_version
            )));
        }
        Ok(cp)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop after this many steps (the schedule and its evaluation cadence
    /// are unchanged, so the run can be resumed).
    pub stop_at: Option<u64>,
    /// Where to write a checkpoint when the run stops or finishes.
    pub checkpoint: Option<PathBuf>,
    /// Record wall-clock time in the report.
    pub record_time: bool,
}

/// Trains `exp` (from scratch, or from `resume`) and assembles the report.
/// Training failures yield a report with status `failed` and the history
/// gathered so far; only setup problems are returned as errors.
pub fn run_experiment(exp: &Experiment, resume: Option<RunState>, opts: &RunOptions) -> Result<Report> {
    let start = Instant::now();
    let mut run = match resume {
        Some(run) => {
            if run.config != exp.config.train {
                return Err(CliError::config("checkpoint does not match the experiment configuration"));
            }
            run
        }
        None => init_run(&exp.config.train, &exp.train)?,
    };
    let steps = exp.config.train.schedule.steps;
    let stop = opts.stop_at.unwrap_or(steps).min(steps);
    let outcome = train_until(&mut run, &exp.train, &exp.test, stop);
    let (status, error) = match outcome {
        Ok(()) if run.step < steps => (RunStatus::Suspended, None),
        Ok(()) => (RunStatus::Completed, None),
        Err(e) if e.is_config() => return Err(e.into()),
        Err(e) => (RunStatus::Failed, Some(e.to_string())),
    };
    if let Some(path) = &opts.checkpoint {
        if status != RunStatus::Failed {
            Checkpoint { schema_version: CHECKPOINT_VERSION, experiment: exp.config.clone(), run: run.clone() }
                .save(path)?;
        }
    }
    Ok(Report {
        schema_version: REPORT_VERSION,
        config: exp.config.clone(),
        history: run.history,
        wall_time_seconds: opts.record_time.then(|| start.elapsed().as_secs_f64()),
        seed: exp.config.train.seed,
        status,
        error,
    })
}
