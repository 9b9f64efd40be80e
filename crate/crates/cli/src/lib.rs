//! Command-line driver for `uvrefine`: one scene per invocation, with a
//! `batch` wrapper that runs job lists in worker processes.

pub mod args;
pub mod commands;
pub mod error;
pub mod grid;
pub mod jobs;

use args::{Cli, Command};
use error::CliResult;

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Prepare(a) => commands::prepare(a),
        Command::Refine(a) => commands::refine(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::DiagnoseMatching(a) => commands::diagnose_matching(a),
        Command::FetchWeights(a) => commands::fetch_weights(a),
        Command::Report(c) => commands::report(c),
        Command::Batch(a) => commands::batch(a),
    }
}
