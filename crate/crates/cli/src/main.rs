mod args;
mod commands;
mod config;
mod error;

use clap::Parser;

use args::{Cli, Command};
use error::CliError;

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Generate(args) => commands::cmd_generate(args),
        Command::Train(args) => commands::cmd_train(args),
        Command::Evaluate(args) => commands::cmd_evaluate(args),
        Command::Attend(args) => commands::cmd_attend(args),
    }
}

fn main() {
    // clap itself exits with code 2 on usage errors, matching the contract.
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
