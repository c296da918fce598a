use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dmlbench_cli::report::Report;
use dmlbench_cli::sweep::{run_sweep, write_csv, SweepAxis, SweepConfig};
use dmlbench_cli::verify::{run_checks, Group, Mutation};
use dmlbench_cli::*;

/// Deep metric learning benchmark harness.
///
/// Exit codes: 0 success, 1 training or verification failure, 2 configuration
/// error. Set DMLBENCH_LOG (error, warn, info, debug) for log output.
#[derive(Parser, Debug)]
#[command(name = "dmlbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train and evaluate one configuration.
    Run {
        #[command(flatten)]
        experiment: ExperimentArgs,
        /// JSON report path; the table is also written next to it as .txt.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a checkpoint here when the run stops or finishes.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Stop after this many steps (use with --checkpoint).
        #[arg(long)]
        stop_at: Option<u64>,
        /// Continue from a checkpoint; experiment flags are taken from it.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Record wall-clock time (makes reports differ between runs).
        #[arg(long)]
        record_time: bool,
    },
    /// Run a grid over one axis and write a long-format CSV.
    Sweep {
        #[command(flatten)]
        experiment: ExperimentArgs,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Comma-separated losses run at every value (overrides --loss).
        #[arg(long, value_delimiter = ',')]
        losses: Vec<String>,
        /// Use seed + cell index instead of one seed for every cell.
        #[arg(long)]
        reseed: bool,
        /// Parallel cells.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gradient checks, brute-force oracles and sampler tests.
    Verify {
        /// Restrict to these groups.
        #[arg(long, value_enum, value_delimiter = ',')]
        only: Vec<Group>,
        /// Inject a fault to confirm the suite catches it.
        #[arg(long, value_enum)]
        mutate: Option<Mutation>,
    },
}

fn emit(report: &Report, out: Option<&PathBuf>) -> Result<()> {
    let table = report.table();
    print!("{table}");
    if let Some(path) = out {
        report.write(path)?;
        dmlbench_train::trainer::write_atomic(&path.with_extension("txt"), table.as_bytes())
            .map_err(|e| CliError::Failure(e.to_string()))?;
    }
    Ok(())
}

fn run(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Run { experiment, out, checkpoint, stop_at, resume, record_time } => {
            let (exp, state) = match resume {
                Some(path) => {
                    let cp = Checkpoint::load(&path)?;
                    (Experiment::from_config(cp.experiment)?, Some(cp.run))
                }
                None => (experiment.build()?, None),
            };
            let opts = RunOptions { stop_at, checkpoint, record_time };
            let report = run_experiment(&exp, state, &opts)?;
            emit(&report, out.as_ref())?;
            Ok(if report.status == RunStatus::Failed { EXIT_FAILURE } else { EXIT_OK })
        }
        Command::Sweep { experiment, axis, values, losses, reseed, workers, out } => {
            let losses = if losses.is_empty() { vec![experiment.loss.clone()] } else { losses };
            let cfg = SweepConfig { base: experiment, axis, values, losses, reseed };
            let rows = run_sweep(&cfg, workers)?;
            match out {
                Some(path) => write_csv(&rows, &path)?,
                None => print!("{}", String::from_utf8_lossy(&dmlbench_cli::sweep::to_csv(&rows)?)),
            }
            let failed = rows.iter().filter(|r| !r.error.is_empty()).count();
            if failed > 0 {
                eprintln!("{failed} of {} cells failed (see the error column)", rows.len());
            }
            Ok(EXIT_OK)
        }
        Command::Verify { only, mutate } => {
            let results = run_checks(&only, mutate);
            for r in &results {
                println!("{}", r.line());
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("{} checks, {failed} failed", results.len());
            Ok(if failed == 0 { EXIT_OK } else { EXIT_FAILURE })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DMLBENCH_LOG", "warn")).init();
    let cli = Cli::parse();
    let code = match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
