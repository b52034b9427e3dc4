//! `ridge-equiv`: estimates, equivalence checks, block decompositions and
//! seeded instance generation over JSON model files.
//!
//! Exit codes: 0 verdict true, 1 verdict false, 2 usage / IO / missing data /
//! unmet precondition, 3 invalid model, 4 route or oracle disagreement,
//! 5 generation failure.

mod commands;
mod model_file;
mod report;
mod sci;

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ridge_equiv::{GenKind, ToleranceConfig};

use commands::{PenaltyArg, PhiArg, What};

const SEED_VAR: &str = "RIDGE_EQUIV_SEED";

#[derive(Parser, Debug)]
#[command(name = "ridge-equiv", version)]
#[command(about = "General ridge estimators and exact equivalence checks for the general linear model")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Relative Frobenius tolerance for matrix equality
    #[arg(long, global = true)]
    tol_rel: Option<f64>,

    /// Absolute Frobenius floor for matrix equality
    #[arg(long, global = true)]
    tol_abs: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ridge estimate and RSS for one (Phi, K) choice; needs "y"
    Estimate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "omega")]
        phi: PhiArg,
        #[arg(long, value_enum, default_value = "k1")]
        penalty: PenaltyArg,
    },
    /// Per-condition residuals and verdicts of one checker, or all of them
    Check {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        what: What,
    },
    /// Write a seeded instance satisfying the chosen condition family
    Generate {
        /// random, rcond, gre-eq, rss-eq, bias or kruskal
        #[arg(long)]
        kind: GenKind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        /// Overridden by RIDGE_EQUIV_SEED when that is set
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Blocks of Omega and of its inverse in the (X, Z) frame
    Decompose {
        #[arg(long)]
        input: PathBuf,
    },
}

/// A command that ended without a report.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
    /// Unmet precondition or missing optional data: `check --what all`
    /// skips the checker instead of failing.
    pub skippable: bool,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
            skippable: false,
        }
    }

    pub fn missing(message: impl Into<String>) -> Self {
        Self {
            skippable: true,
            ..Self::usage(message)
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
            skippable: false,
        }
    }
}

fn tolerance(cli: &Cli) -> Result<ToleranceConfig, Failure> {
    let base = ToleranceConfig::default();
    let tol = ToleranceConfig::new(
        cli.tol_rel.unwrap_or(base.rel_eq),
        cli.tol_abs.unwrap_or(base.abs_eq),
        base.rank_rel,
        base.psd_floor,
    )?;
    Ok(tol)
}

fn seed(flag: u64) -> Result<u64, Failure> {
    match std::env::var(SEED_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::usage(format!("{SEED_VAR} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(flag),
    }
}

/// Writes to stdout; a closed pipe is an IO failure, not a panic.
pub fn emit(text: &str) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    writeln!(out, "{text}")
        .and_then(|_| out.flush())
        .map_err(|e| Failure::usage(format!("cannot write to stdout: {e}")))
}

fn run(cli: &Cli) -> Result<u8, Failure> {
    let tol = tolerance(cli)?;
    let outcome = match &cli.command {
        Command::Estimate { input, phi, penalty } => commands::estimate(input, *phi, *penalty, &tol)?,
        Command::Check { input, what } => commands::check(input, *what, &tol)?,
        Command::Decompose { input } => commands::decompose(input, &tol)?,
        Command::Generate { kind, n, k, seed: flag, out } => {
            commands::generate(*kind, *n, *k, seed(*flag)?, out.as_deref(), &tol)?;
            return Ok(0);
        }
    };
    let json = serde_json::to_string_pretty(&outcome.report).map_err(|e| Failure::usage(e.to_string()))?;
    emit(&json)?;
    Ok(outcome.code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
