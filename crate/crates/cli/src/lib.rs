pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use args::{Cli, Command};
use error::CliResult;

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Adjust(args) => {
            let cfg = commands::resolve_run_config(&args)?;
            let report = commands::cmd_adjust(&cfg)?;
            if let Some(row) = report
                .rejections
                .iter()
                .find(|r| r.alpha == cfg.alpha && r.procedure == crw::mtp::Procedure::WeightedBh)
            {
                eprintln!("{} tests, {} weighted-BH rejections at alpha {}", report.n_tests, row.n_rejections, cfg.alpha);
            }
            Ok(())
        }
        Command::Estimate(args) => {
            let to_dir = args.output_dir.is_some();
            let cfg = commands::resolve_run_config(&args)?;
            commands::cmd_estimate(&cfg, to_dir).map(|_| ())
        }
        Command::Simulate(args) => {
            let spec = commands::resolve_sim_spec(&args)?;
            commands::cmd_simulate(&spec, &args.output_dir).map(|_| ())
        }
        Command::Rankprob(args) => commands::cmd_rankprob(&args).map(|_| ()),
        Command::Weights(args) => commands::cmd_weights(&args).map(|_| ()),
    }
}
