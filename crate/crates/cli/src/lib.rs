//! Batch front end: model specs and CSV data in, result directories and
//! plain-text tables out.

pub mod args;
pub mod commands;
pub mod data;
pub mod error;
pub mod report;
pub mod spec;

use std::io::Write;

use args::{Cli, Command};
pub use error::{CliError, Result};

pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Fit(a) => commands::run_fit(a, stdout),
        Command::Summary { result } => commands::run_summary(result, stdout),
        Command::Predict(a) => commands::run_predict(a, stdout),
        Command::Mcmc(a) => commands::run_mcmc(a, stdout),
        Command::Marginal { file, op } => commands::run_marginal(file, op, stdout),
        Command::Plotdata(a) => commands::run_plotdata(a, stdout),
    }
}
