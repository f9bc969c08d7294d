use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cobos_core::agents::ControllerKind;
use cobos_core::bench::{emit_table, run_grid, status_counts, write_reports, BenchError, ExperimentGrid};
use cobos_core::cases::{generate_case, CaseError, CaseSpec};
use cobos_core::domain::{check_schedule, Job};
use cobos_core::sim::{run_sim, SimConfig, SimError};
use cobos_core::solver::{build_model, solve, SolveLimits, SolverError};
use cobos_service::{serve, ServiceConfig, DEFAULT_PORT, DEFAULT_TICK_MS};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "cobos", version, about = "Online scheduling for human-robot collaboration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a job for one of the benchmark cases.
    Gen {
        #[arg(long = "case")]
        case_id: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve a job over its estimates and print the schedule.
    Solve {
        job: PathBuf,
        /// Node budget; unlimited by default.
        #[arg(long)]
        node_limit: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate one closed-loop run and print its record.
    Run {
        job: PathBuf,
        #[arg(long, default_value = "cobos")]
        method: ControllerKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Humans never refuse.
        #[arg(long)]
        no_rejection: bool,
        /// Controllers see the realized durations as estimates.
        #[arg(long)]
        true_estimates: bool,
        /// Leave the event trace out of the record.
        #[arg(long)]
        no_trace: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment grid and write records.jsonl, summary.csv, table.txt,
    /// plotdata.json and latency.csv.
    Bench {
        /// Grid as JSON; missing fields take the desk-grid defaults.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; 0 uses every core.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value = "bench-out")]
        out: PathBuf,
        /// 100 seeds per instance instead of 25.
        #[arg(long, conflicts_with = "grid")]
        full: bool,
        #[arg(long)]
        true_estimates: bool,
    },
    /// Serve live runs over HTTP and WebSocket.
    Serve {
        #[arg(long, env = "COBOS_PORT", default_value_t = DEFAULT_PORT)]
        port: u16,
        /// Wall-clock milliseconds per tick.
        #[arg(long, env = "COBOS_TICK_MS", default_value_t = DEFAULT_TICK_MS)]
        tick_ms: u64,
        /// Finished runs are exported here.
        #[arg(long, env = "COBOS_EXPORT_DIR")]
        export_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("solver returned an invalid schedule: {0}")]
    BadSchedule(String),
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|source| CliError::Parse { path: path.into(), source })
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(path) => fs::write(path, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen { case_id, seed, out } => {
            let job = generate_case(&CaseSpec::for_case(case_id, seed)?)?;
            emit(&job, out.as_deref())
        }
        Command::Solve { job, node_limit, out } => {
            let job: Job = read_json(&job)?;
            let limits = node_limit.map_or_else(SolveLimits::unlimited, SolveLimits::nodes);
            let result = solve(&build_model(&job)?, limits);
            if let Some(s) = &result.schedule {
                let report = check_schedule(&job, s);
                if !report.is_valid() {
                    return Err(CliError::BadSchedule(report.to_string()));
                }
            }
            eprintln!("{:?}, makespan {:?}, {} nodes", result.status, result.objective, result.stats.nodes);
            emit(&result, out.as_deref())
        }
        Command::Run { job, method, seed, no_rejection, true_estimates, no_trace, out } => {
            let job: Job = read_json(&job)?;
            let config =
                SimConfig { rejection: !no_rejection, true_estimates, record_trace: !no_trace, ..SimConfig::default() };
            let record = run_sim(&job, method, seed, &config)?;
            eprintln!("{}: {:?}, makespan {:?}", record.method, record.status, record.makespan);
            emit(&record, out.as_deref())
        }
        Command::Bench { grid, seed, workers, out, full, true_estimates } => {
            let mut grid = match grid {
                Some(path) => read_json::<ExperimentGrid>(&path)?,
                None if full => ExperimentGrid::full(),
                None => ExperimentGrid::desk(),
            };
            if let Some(seed) = seed {
                grid.base_seed = seed;
            }
            if let Some(workers) = workers {
                grid.parallelism = workers;
            }
            grid.true_estimates |= true_estimates;
            eprintln!("running {} simulations", grid.total_runs());
            let records = run_grid(&grid)?;
            let rows = write_reports(&out, &records)?;
            for (status, n) in status_counts(&records) {
                eprintln!("{status:?}: {n}");
            }
            print!("{}", emit_table(&rows));
            eprintln!("reports written to {}", out.display());
            Ok(())
        }
        Command::Serve { port, tick_ms, export_dir } => {
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(serve(ServiceConfig { port, tick_ms, export_dir }))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
