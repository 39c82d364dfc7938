//! Command-line front end: run scenarios, validate scenario files, and
//! reshape finished runs for plotting.
//!
//! Exit codes: 0 on success, 1 on validation or run failure (a robot timed
//! out, collided, or the file was invalid), 2 on I/O errors.

use clap::{Parser, Subcommand};
use nmpc_lbf::simulator::{self, RunOptions, SimError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "nmpc-lbf",
    version,
    about = "Deterministic multi-robot navigation with online-learned barrier functions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trajectory, telemetry, clearance and
    /// metrics logs into the output directory.
    Run {
        /// Scenario JSON file.
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario's tick budget.
        #[arg(long)]
        max_ticks: Option<usize>,
        /// Also write each robot's first- and last-tick training datasets.
        #[arg(long)]
        dump_datasets: bool,
        /// Also write each robot's final network parameters.
        #[arg(long)]
        dump_weights: bool,
    },
    /// Parse and validate a scenario file without running it.
    Validate {
        /// Scenario JSON file.
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Reshape a finished run's trajectory logs into plot-ready CSVs
    /// (distance-to-goal and control inputs over time).
    Plotdata {
        /// Directory holding a run's trajectory_<id>.csv files.
        #[arg(long)]
        run: PathBuf,
    },
}

fn error_code(err: &SimError) -> u8 {
    match err {
        SimError::Io { .. } => 2,
        SimError::Parse { .. } | SimError::Validation { .. } => 1,
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            scenario,
            out,
            seed,
            max_ticks,
            dump_datasets,
            dump_weights,
        } => {
            let sc = match simulator::load_scenario(&scenario) {
                Ok(sc) => sc,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(error_code(&e));
                }
            };
            let opts = RunOptions {
                seed,
                max_ticks,
                dump_datasets,
                dump_weights,
            };
            let result = match simulator::run(&sc, &out, &opts) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(error_code(&e));
                }
            };
            let summary = simulator::summarize(&result);
            println!(
                "scenario {:?}: {} ticks in {:.1} s wall clock",
                summary.scenario, summary.ticks_executed, summary.wall_clock_s
            );
            for r in &summary.robots {
                println!(
                    "  {}: {:?} (time {:.2} s, path {:.2} m, min clearance {:.3} m, \
                     mean solve {:.1} ms, mean train {:.1} ms)",
                    r.id,
                    r.outcome,
                    r.time_to_goal_s,
                    r.path_length_m,
                    r.min_clearance_m,
                    1e3 * r.mean_solve_time_s,
                    1e3 * r.mean_train_time_s,
                );
            }
            if result.success() {
                println!("result: success");
                ExitCode::SUCCESS
            } else {
                eprintln!("result: failure (not all robots reached their goals)");
                ExitCode::from(1)
            }
        }
        Command::Validate { scenario } => match simulator::load_scenario(&scenario) {
            Ok(sc) => {
                println!(
                    "ok: scenario {:?} with {} robot(s), {} obstacle(s), max {} ticks",
                    sc.name,
                    sc.robots.len(),
                    sc.obstacles.len(),
                    sc.max_ticks
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(error_code(&e))
            }
        },
        Command::Plotdata { run } => match simulator::write_plot_data(&run) {
            Ok(()) => {
                println!(
                    "wrote {} and {}",
                    run.join("plot_distance_to_goal.csv").display(),
                    run.join("plot_control_inputs.csv").display()
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(error_code(&e))
            }
        },
    }
}
