mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, Merge};
use sagfree::Error;

/// Process exit statuses.
pub mod exit {
    pub const OK: u8 = 0;
    /// An optimization did not converge, or a check exceeded its tolerance.
    pub const NOT_CONVERGED: u8 = 2;
    pub const PARSE: u8 = 3;
    pub const IO: u8 = 4;
    pub const SOLVER: u8 = 5;
}

fn error_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => exit::IO,
        Error::Parse(_) | Error::Config(_) | Error::BadDimension(_) | Error::DimensionMismatch { .. } => exit::PARSE,
        Error::OutOfBand { .. }
        | Error::DegenerateEdge(_)
        | Error::AntiparallelTangents(_)
        | Error::NotSpd { .. }
        | Error::SolverFailure(_) => exit::SOLVER,
    }
}

fn load_config<T: serde::de::DeserializeOwned + Default>(path: Option<&std::path::Path>) -> sagfree::Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let file = std::fs::File::open(p)?;
            Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
        }
    }
}

fn run(cli: Cli) -> sagfree::Result<u8> {
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Optimize(a) => commands::optimize(a.merge(load_config(cfg)?)),
        Command::Simulate(a) => commands::simulate(a.merge(load_config(cfg)?)),
        Command::CheckGrad(a) => commands::check_grad(a.merge(load_config(cfg)?)),
        Command::BenchBcqp(a) => commands::bench_bcqp(a.merge(load_config(cfg)?)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::PARSE } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_code(&e))
        }
    }
}
