//! `vabr`: train, evaluate and compare volumetric streaming controllers.

mod failure;
mod output;
mod run;
mod spec;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use failure::Failure;
use spec::{Overrides, Resolved};

#[derive(Parser)]
#[command(name = "vabr", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a learned controller and write `curve.csv` and `checkpoint.json`.
    Train {
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Play evaluation episodes and write per-chunk, per-episode and summary
    /// results.
    Eval {
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate several specs on one scenario and write `compare.csv`.
    Compare {
        /// Repeat once per controller; rows follow this order.
        #[arg(long, required = true)]
        spec: Vec<PathBuf>,
        /// Applied to every spec.
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn resolve(path: &Path, overrides: &Overrides) -> Result<Resolved, Failure> {
    spec::load(path)?.apply(overrides)
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train { spec, overrides } => run::train(&resolve(&spec, &overrides)?),
        Command::Eval { spec, overrides } => run::eval(&resolve(&spec, &overrides)?),
        Command::Compare { spec, overrides } => {
            let specs = spec
                .iter()
                .map(|p| resolve(p, &overrides))
                .collect::<Result<Vec<_>, _>>()?;
            let out = specs[0].out.clone();
            run::compare(&specs, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("vabr: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
