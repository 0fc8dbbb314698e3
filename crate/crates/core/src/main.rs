use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use tinyattn::cli::{self, Command};
use tinyattn::config::RunConfig;

/// Tiny-attention adapter tuning on a toy transformer.
#[derive(Parser)]
#[command(name = "tinyattn", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Config file: JSON or flat `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = RunConfig::load(args.config.as_deref(), &args.set).and_then(|c| cli::run(args.command, &c));
    match result {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("tinyattn {}: {e}", args.command.name());
            ExitCode::from(e.exit_code())
        }
    }
}
