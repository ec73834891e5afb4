mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use renewal_core::pipeline::GroupBy;

/// Trigger-word optimization for street-view renewal edits.
#[derive(Debug, Parser)]
#[command(name = "renewal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimize the trigger word for a single record.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        record: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every method on every record of a manifest and write reports.
    Batch {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Score every vocabulary word with the synthetic oracle.
    OracleScan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        record: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild aggregate tables from a batch output directory.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "group-by")]
        group_by: Option<GroupBy>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, manifest, record, out } => commands::run(&config, manifest, &record, out),
        Command::Batch { config, manifest, out, workers } => commands::batch(&config, manifest, out, workers),
        Command::OracleScan { config, manifest, record, out } => {
            commands::oracle_scan(&config, manifest, &record, out)
        }
        Command::Report { out, group_by } => commands::report(&out, group_by),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code())
        }
    }
}
