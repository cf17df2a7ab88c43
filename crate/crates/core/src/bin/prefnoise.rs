use std::process::ExitCode;

use clap::Parser;
use prefnoise::cli::{self, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let name = cli.command.name();
    match cli::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("prefnoise {name}: {e}");
            ExitCode::FAILURE
        }
    }
}
