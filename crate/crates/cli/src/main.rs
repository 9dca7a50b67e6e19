use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = zpt_cli::Cli::parse();
    match zpt_cli::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(zpt_cli::EXIT_ERROR)
        }
    }
}
