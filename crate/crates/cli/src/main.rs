use std::process::ExitCode;

use clap::Parser;
use crw_cli::args::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match crw_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("crw: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
