#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod commands;
mod error;
mod outdir;
mod overlay;

use clap::Parser;

use args::{Cli, Command};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OVITRAP_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    let result = match &cli.command {
        Command::Plan(c) => commands::plan(c),
        Command::Compile(c) => commands::compile(c),
        Command::Simulate(c) => commands::simulate(c),
        Command::DetectOracle(c) => commands::detect(c),
        Command::Merge(c) => commands::merge(c),
        Command::Count(c) => commands::count(c),
        Command::Eval(c) => commands::eval(c),
        Command::Stats(c) => commands::stats(c),
        Command::Report(c) => commands::report(c),
        Command::Run(c) => commands::run(c),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
