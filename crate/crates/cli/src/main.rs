//! `guti`: ingest corpora, train, generate and validate poems.
//!
//! Exit codes: 0 success, 1 user error (bad flags or inputs), 2 internal
//! error. Data goes to stdout, diagnostics to stderr.

mod evaluate;
mod fail;
mod generate;
mod ingest;
mod store;
mod train;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fail::Failure;

#[derive(Parser, Debug)]
#[command(name = "guti", version, about = "Form-conditioned classical Chinese poetry model")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Form catalog (TOML); the built-in catalog when absent.
    #[arg(long, env = "GUTI_CATALOG", global = true)]
    pub catalog: Option<PathBuf>,
    /// Phonology table (TSV); the built-in table when absent.
    #[arg(long, global = true)]
    pub phonology: Option<PathBuf>,
    /// Emit line-delimited JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Serialize a JSONL corpus and build its vocabulary.
    Ingest(ingest::IngestArgs),
    /// Train a model on an ingested dataset.
    Train(train::TrainArgs),
    /// Sample poems from a trained model and validate them.
    Generate(generate::GenerateArgs),
    /// Check poems in a JSONL file against their forms.
    Validate(validate::ValidateArgs),
    /// Per-token NLL and novelty of a model on a dataset.
    Evaluate(evaluate::EvaluateArgs),
}

/// An explicit seed, or a fresh one reported on stderr so the run can be
/// repeated.
pub fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("seed: {s}");
        s
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Ingest(a) => ingest::run(a, &cli.common),
        Command::Train(a) => train::run(a, &cli.common),
        Command::Generate(a) => generate::run(a, &cli.common),
        Command::Validate(a) => validate::run(a, &cli.common),
        Command::Evaluate(a) => evaluate::run(a, &cli.common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(2)
        }
    }
}
