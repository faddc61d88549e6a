mod args;
mod commands;
mod config;
mod export;
mod manifest;

use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use kinmix_core::{Error, Result};

use args::Cli;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn run(cli: Cli, args: Vec<String>) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("--threads: {e}")))?;
    pool.install(|| {
        let start = Instant::now();
        let mut outcome = commands::dispatch(&cli.command, args, rayon::current_num_threads())?;
        outcome.manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
        outcome.manifest.save(&outcome.path)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(cli, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerical_failures_exit_with_three() {
        assert_eq!(exit_code(&Error::Numerical("nan".into())), 3);
        assert_eq!(exit_code(&Error::InvalidArgument("x".into())), 2);
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("disk"))), 2);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn fit_accepts_method_and_table_flags() {
        let cli = Cli::try_parse_from([
            "kinmix", "fit", "smm", "--image", "a.dpet", "--table-dir", "t", "--build-tables", "--g", "3", "--out", "o",
        ])
        .unwrap();
        match cli.command {
            args::Command::Fit(f) => {
                assert_eq!(f.method, args::Method::Smm);
                assert!(f.tables.build_tables);
                assert_eq!(f.g, Some(3));
            }
            _ => panic!("wrong subcommand"),
        }
        assert!(Cli::try_parse_from(["kinmix", "fit", "smm", "--image", "a", "--build-tables", "--out", "o"]).is_err());
    }
}
