mod commands;
mod demo;
mod spec;

use clap::{Parser, Subcommand};
use commands::{Emit, Notion, Report, EXIT_CONFIG};
use ctleak::lang::Width;
use spec::Overrides;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Constant-time analyses for programs with compiler-resolved nondeterminism.
#[derive(Parser)]
#[command(name = "ctleak", version)]
struct Cli {
    /// Word width in bits (8, 16, 32 or 64), overriding the spec.
    #[arg(long, global = true, value_parser = parse_width)]
    word_width: Option<Width>,
    /// Step budget, overriding the spec.
    #[arg(long, global = true)]
    fuel: Option<u64>,
    /// Resolve stack allocations with the seeded oracle of this seed instead of the spec's oracle.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print reports as JSON.
    #[arg(long, global = true)]
    json: bool,
    /// Write output here instead of standard output (a directory for `compile`).
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run once under the spec's oracle and print the outcome.
    Run { spec: PathBuf },
    /// Enumerate every execution over the spec's choice universe.
    Enumerate { spec: PathBuf },
    /// Decide a constant-time notion over the spec's secret space.
    CheckCt {
        spec: PathBuf,
        #[arg(long, value_enum, default_value = "predictor")]
        notion: Notion,
    },
    /// Compile through a list of passes.
    Compile {
        spec: PathBuf,
        /// Comma-separated pass names, or `pipeline`.
        #[arg(long, default_value = "pipeline")]
        passes: String,
        #[arg(long, value_enum)]
        emit: Option<Emit>,
    },
    /// Check one pass against a contract.
    CheckPass {
        spec: PathBuf,
        /// A pass name, or `pipeline` for the composed pipeline.
        #[arg(long)]
        pass: String,
        /// leakage, oracle or predictor.
        #[arg(long)]
        contract: String,
        /// Succeed exactly when the contract fails.
        #[arg(long)]
        expect_fail: bool,
    },
    /// Walk through a bundled example; lists them when no name is given.
    Demo { name: Option<String> },
}

fn parse_width(s: &str) -> Result<Width, String> {
    s.parse::<u32>().ok().and_then(Width::from_bits).ok_or_else(|| format!("unsupported word width {s}"))
}

fn load(path: &Path, o: &Overrides) -> anyhow::Result<spec::Resolved> {
    spec::load(path)?.resolve(o)
}

fn execute(cli: &Cli) -> anyhow::Result<Report> {
    let o = Overrides { width: cli.word_width, fuel: cli.fuel, seed: cli.seed };
    let out = cli.output.as_deref();
    match &cli.command {
        Command::Run { spec } => commands::run(&load(spec, &o)?),
        Command::Enumerate { spec } => commands::enumerate(&load(spec, &o)?),
        Command::CheckCt { spec, notion } => commands::check_ct(&load(spec, &o)?, *notion),
        Command::Compile { spec, passes, emit } => {
            commands::compile(&load(spec, &o)?, &commands::parse_passes(passes), *emit, out, cli.json)
        }
        Command::CheckPass { spec, pass, contract, expect_fail } => {
            commands::check_pass(&load(spec, &o)?, pass, contract, *expect_fail, cli.json)
        }
        Command::Demo { name } => demo::demo(name.as_deref(), &o),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let report = match execute(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    let to_file = cli.output.as_ref().filter(|_| !matches!(cli.command, Command::Compile { .. }));
    match to_file {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &report.text) {
                eprintln!("error: writing {}: {e}", path.display());
                return ExitCode::from(EXIT_CONFIG as u8);
            }
        }
        None => print!("{}", report.text),
    }
    ExitCode::from(report.code as u8)
}
