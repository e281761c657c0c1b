//! `cat-tool`: command-line front end for class affinity estimation,
//! transfer, subset sampling, evaluation and the synthetic toy lab.

mod args;
mod commands;
mod error;
mod manifest;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use crate::args::Cli;
use crate::commands::Context;
use crate::error::{CliError, CliResult};

fn report(err: &CliError, human: bool) -> ExitCode {
    if human {
        eprintln!("{err}");
    } else {
        eprintln!("{}", err.to_json());
    }
    ExitCode::from(err.exit_code)
}

fn configure_threads(threads: Option<usize>) -> CliResult<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(CliError::usage("invalid_argument", "--threads must be at least 1"));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage("invalid_argument", format!("cannot size the thread pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    log::warn!("built without the `parallel` feature; --threads {n} has no effect");
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let human = argv.iter().any(|a| a == "--human-errors");
            if human {
                let _ = e.print();
                return ExitCode::from(error::EXIT_USAGE);
            }
            let message = e.render().to_string();
            return report(&CliError::usage("usage", message.trim()), false);
        }
    };

    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .init();

    if let Err(e) = configure_threads(cli.threads) {
        return report(&e, cli.human_errors);
    }
    let ctx = Context {
        seed: cli.seed,
        threads: cli.threads,
        argv: argv[1..].to_vec(),
        exec: cat_core::Execution::default(),
    };
    match commands::run(&ctx, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e, cli.human_errors),
    }
}
