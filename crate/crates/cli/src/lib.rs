//! Command-line front end for the regional latent-state QoS pipeline.
//!
//! Results go to files and a short summary to stdout; progress and
//! wall-clock timings are logged to stderr so that reruns with the same
//! config produce byte-identical outputs.

pub mod args;
pub mod commands;
pub mod error;
pub mod experiment;
pub mod io;
pub mod stats;

use std::ffi::OsString;
use std::fmt;
use std::time::Instant;

use clap::Parser;

pub use args::{Cli, Command};
pub use error::{CliError, CliResult};
pub use experiment::{run_experiment, ExperimentConfig, Method, RunArtifact};

/// Elapsed wall-clock time, displayed in seconds.
pub(crate) struct Stopwatch(Instant);

impl Stopwatch {
    pub(crate) fn start() -> Self {
        Stopwatch(Instant::now())
    }
}

impl fmt::Display for Stopwatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}s", self.0.elapsed().as_secs_f64())
    }
}

pub fn dispatch(command: &Command) -> CliResult<()> {
    match command {
        Command::Prepare(a) => commands::prepare(a),
        Command::Split(a) => commands::split(a),
        Command::Synth(a) => commands::synth(a),
        Command::FitLatent(a) => commands::fit_latent(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Experiment(a) => {
            let config = ExperimentConfig::load(&a.config)?;
            let art = run_experiment(&config)?;
            println!(
                "{} result rows, {} failures, config {}",
                art.rows.len(),
                art.failure_rows.len(),
                &art.config_hash[..16]
            );
            print!("{}", experiment::markdown_summary(&art.summary, &config));
            Ok(())
        }
        Command::GateStats(a) => commands::gate_stats(a),
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
