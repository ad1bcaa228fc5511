//! truncem: truncated Euler-Maruyama experiments for super-linear SDEs and
//! their time-changed counterparts.

mod commands;
mod config;

use clap::{Parser, Subcommand};

use config::{resolve, RunArgs};

#[derive(Parser, Debug)]
#[command(
    name = "truncem",
    version,
    about = "Truncated Euler-Maruyama rate experiments for super-linear and time-changed SDEs",
    after_help = "Seeds are 64-bit unsigned; the TRUNCEM_SEED environment variable overrides \
                  both --seed and the config file. Identical configurations produce \
                  byte-identical output files regardless of --workers."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Strong-error sweep against a coupled fine reference, with the
    /// log-log rate fit
    Rates(RunArgs),
    /// Strong-error sweep for the time-changed composition x(E(t))
    Timechanged(RunArgs),
    /// Grid-maximum moment estimates across step sizes
    Moments(RunArgs),
    /// Randomized probe of the monotonicity and coercivity assumptions
    Probe(RunArgs),
    /// Single-trajectory dump
    Simulate(RunArgs),
}

type Runner = fn(&config::Settings) -> Result<(), config::CliError>;

fn main() {
    let cli = Cli::parse();
    let (args, runner): (&RunArgs, Runner) = match &cli.command {
        Command::Rates(a) => (a, commands::run_rates),
        Command::Timechanged(a) => (a, commands::run_timechanged),
        Command::Moments(a) => (a, commands::run_moments),
        Command::Probe(a) => (a, commands::run_probe),
        Command::Simulate(a) => (a, commands::run_simulate),
    };
    let outcome = resolve(args).and_then(|settings| runner(&settings));
    if let Err(e) = outcome {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
