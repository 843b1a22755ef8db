use std::process::ExitCode;

use clap::Parser;
use steering_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::from_default_env()
        .filter_level(if cli.quiet { log::LevelFilter::Error } else { log::LevelFilter::Warn })
        .init();
    match run(cli) {
        Ok(v) => ExitCode::from(v.exit_code()),
        Err(e) => {
            eprintln!("steer: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
