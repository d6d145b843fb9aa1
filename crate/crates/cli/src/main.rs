//! `ets`: dataset preparation, augmentation preview, evaluation and grid
//! search for few-shot detection fine-tuning.

mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::Ctx;
use config::GlobalConfig;

fn run(cli: Cli) -> ets_core::Result<()> {
    let cfg = match &cli.config {
        Some(p) => GlobalConfig::load(p)?,
        None => GlobalConfig::default(),
    };
    let level = cli
        .log_level
        .or_else(|| cfg.log_level.as_deref().and_then(|l| l.parse().ok()))
        .unwrap_or(log::LevelFilter::Warn);
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    let ctx = Ctx {
        cfg,
        workdir_flag: cli.workdir,
        json: cli.json,
    };
    match cli.command {
        Command::Dataset(c) => commands::dataset(&ctx, c),
        Command::Augment(c) => commands::augment(&ctx, c),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Search(a) => commands::search(&ctx, a),
        Command::Runner(c) => commands::runner(&ctx, c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        // usage errors exit 2, --help and --version exit 0
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
