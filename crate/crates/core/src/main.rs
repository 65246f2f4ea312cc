use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use serde_json::json;

use spikediff::cli::{self, Command};
use spikediff::config::{RunConfig, SEED_ENV};
use spikediff::Error;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    Train,
    Finetune,
    Sample,
    Convert,
    Energy,
    Verify,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Train => Command::Train,
            Cmd::Finetune => Command::Finetune,
            Cmd::Sample => Command::Sample,
            Cmd::Convert => Command::Convert,
            Cmd::Energy => Command::Energy,
            Cmd::Verify => Command::Verify,
        }
    }
}

/// Spiking diffusion models: train, fine-tune, sample, convert, measure.
#[derive(Debug, Parser)]
#[command(name = "spikediff", version)]
struct Args {
    command: Cmd,
    /// TOML file of `key = value` settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set steps=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn fail(code: u8, kind: &str, err: &Error) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": err.to_string() }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let text = match &args.config {
        Some(p) => match std::fs::read_to_string(p) {
            Ok(t) => t,
            Err(e) => {
                let err = Error::Config(format!("cannot read {}: {e}", p.display()));
                return fail(1, "validation", &err);
            }
        },
        None => String::new(),
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = match RunConfig::resolve(&text, &args.overrides, env_seed.as_deref()) {
        Ok(c) => c,
        Err(e) => return fail(1, "validation", &e),
    };
    match cli::run(args.command.into(), &cfg) {
        Ok(outcome) => {
            println!("{}", serde_json::to_string(&outcome).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) if e.is_validation() => fail(1, "validation", &e),
        Err(e) => fail(2, "runtime", &e),
    }
}
