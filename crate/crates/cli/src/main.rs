mod args;
mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use commands::{Exit, EXIT_USAGE};
use config::RunConfig;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.downcast_ref::<Exit>().map_or(EXIT_USAGE, |x| x.code))
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<u8> {
    let g = &cli.global;
    let cfg = match &cli.command {
        Command::Solve(a) => RunConfig::new(g, Some(&a.iteration), None)?,
        Command::Validate(a) => RunConfig::new(g, None, Some(&a.mc))?,
        Command::Compare(a) => RunConfig::new(g, Some(&a.iteration), Some(&a.mc))?,
        Command::Pf(_) | Command::Sensitivity(_) => RunConfig::new(g, None, None)?,
    };
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Pf(a) => commands::pf(&cfg, a),
        Command::Solve(a) => commands::solve(&cfg, a),
        Command::Sensitivity(a) => commands::sensitivity(&cfg, a),
        Command::Validate(a) => commands::validate_cmd(&cfg, a),
        Command::Compare(_) => commands::compare(&cfg),
    }
}
