mod args;
mod commands;
mod config;
mod data;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use serde_json::json;
use twostage::{Error, Result};

use args::{Cli, Command};
use config::{FileConfig, RunConfig};

fn error_json(kind: &str, message: &str) -> String {
    json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let run = match cli.command {
        Command::Mc(a) => RunConfig::mc(a, &file)?,
        Command::Estimate(a) => RunConfig::estimate(a, &file)?,
        Command::Peer(a) => RunConfig::peer(a, &file)?,
        Command::NetworkGen(a) => RunConfig::network_gen(a, &file)?,
    };
    if let Some(t) = cli.threads.or(file.threads) {
        if t == 0 {
            return Err(Error::InvalidInput("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    match &run {
        RunConfig::Mc(r) => commands::mc(r),
        RunConfig::Estimate(r) => commands::estimate(r),
        RunConfig::Peer(r) => commands::peer(r),
        RunConfig::NetworkGen(r) => commands::network_gen(r),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            eprintln!("{}", error_json("Usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
