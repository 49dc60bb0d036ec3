mod args;
mod preview;
mod stages;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use stages::CliError;

fn threads_from_env() -> usize {
    std::env::var("MATFORGE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gbuffers(a) => stages::gbuffers(&a),
        Command::Dataset(a) => stages::dataset(&a),
        Command::Train(a) => stages::train(&a),
        Command::Generate(a) => stages::generate(&a),
        Command::Bake(a) => stages::bake(&a),
        Command::Eval(a) => stages::eval(&a),
        Command::Pipeline(a) => stages::pipeline(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match matforge::par::with_threads(threads_from_env(), || run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
