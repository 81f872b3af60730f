mod cli;
mod commands;
mod config;
mod imageio;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgMatches, CommandFactory, FromArgMatches};

use cli::Cli;
use manifest::Recorder;

const EXIT_VALIDATION: u8 = 1;
const EXIT_IO: u8 = 2;

fn exit_code(error: &anyhow::Error) -> u8 {
    for cause in error.chain() {
        if let Some(e) = cause.downcast_ref::<styleforge::Error>() {
            return if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_IO
            };
        }
    }
    EXIT_IO
}

/// Parses argv, layering the optional config file under explicit flags.
fn parse(argv: Vec<OsString>) -> Result<(ArgMatches, Vec<String>), ExitCode> {
    let command = Cli::command();
    let usage = |e: clap::Error| {
        let _ = e.print();
        if e.use_stderr() {
            ExitCode::from(EXIT_VALIDATION)
        } else {
            ExitCode::SUCCESS
        }
    };
    let matches = command.clone().try_get_matches_from(&argv).map_err(usage)?;
    let Some(path) = matches.get_one::<PathBuf>("config") else {
        return Ok((matches, Vec::new()));
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let merged = config::load(path).and_then(|entries| {
        Ok(config::merge_into_argv(
            &argv, &command, name, sub, &entries,
        )?)
    });
    let (argv, applied) = merged.map_err(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(exit_code(&e))
    })?;
    let matches = command.try_get_matches_from(argv).map_err(usage)?;
    Ok((matches, applied))
}

fn main() -> ExitCode {
    let (matches, from_config) = match parse(std::env::args_os().collect()) {
        Ok(parsed) => parsed,
        Err(code) => return code,
    };
    let cli = Cli::from_arg_matches(&matches).expect("matches come from this parser");

    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();

    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_VALIDATION);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("global pool is configured once");
    }

    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let resolved = config::resolved(&Cli::command(), name, sub, &from_config);
    let primary = sub
        .get_one::<PathBuf>("out")
        .expect("every subcommand has --out");
    let mut rec = Recorder::new(cli.command.name(), resolved, primary);
    let result = commands::run(&cli.command, &mut rec).and_then(|()| Ok(rec.finish()?));
    match result {
        Ok(path) => {
            log::info!("manifest written to {}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
