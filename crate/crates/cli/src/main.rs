use std::process;

use clap::Parser;
use sirus_cli::args::{Cli, Command};
use sirus_cli::{commands, CliError, ExitCode};

const THREADS_VAR: &str = "SIRUS_THREADS";

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_VAR} must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Fit(args) => commands::fit(&args).map(|_| ExitCode::Success),
        Command::Predict(args) => commands::predict(&args).map(|_| ExitCode::Success),
        Command::Tune(args) => commands::tune(&args).map(|_| ExitCode::Success),
        Command::Stability(args) => commands::stability(&args).map(|_| ExitCode::Success),
        Command::Benchmark(args) => commands::benchmark(&args).map(|(_, failed)| {
            if failed {
                ExitCode::Runtime
            } else {
                ExitCode::Success
            }
        }),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { ExitCode::Config } else { ExitCode::Success };
            let _ = e.print();
            process::exit(code as i32);
        }
    };
    let code = run(cli).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        e.exit_code()
    });
    process::exit(code as i32);
}
