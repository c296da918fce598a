//! The `dmlbench` command-line harness as a library: experiment
//! configuration, single runs with checkpoints, sweeps and the verification
//! suite.

pub mod config;
pub mod error;
pub mod report;
pub mod run;
pub mod sweep;
pub mod verify;

pub use config::{DatasetSource, Experiment, ExperimentArgs, ExperimentConfig};
pub use error::{CliError, Result, EXIT_CONFIG, EXIT_FAILURE, EXIT_OK};
pub use report::{Report, RunStatus, REPORT_SCHEMA, REPORT_VERSION};
pub use run::{run_experiment, Checkpoint, RunOptions};
pub use sweep::{run_sweep, SweepAxis, SweepConfig, SweepRow};
pub use verify::{run_checks, CheckResult, Group, Mutation};
