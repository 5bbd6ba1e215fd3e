//! `ccpa`: command-line front end for the CCPA attack/defense pipeline.

mod commands;
mod config;
mod provenance;

use std::path::PathBuf;
use std::process::ExitCode;

use ccpa_core::attacks::Variant;
use ccpa_core::Error;
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ccpa", version, about = "Coordinated cyber-physical attack localization lab")]
pub struct Cli {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true, env = "CCPA_CONFIG")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a MATPOWER or native JSON case and print its dimensions.
    ParseCase {
        /// Case file, or `ieee14` for the bundled case.
        case: String,
        /// Print the summary as JSON.
        #[arg(long)]
        json: bool,
        /// Also write the case in native JSON format.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Generate a labeled dataset (`OUT.csv` + `OUT.json`).
    GenData {
        #[arg(long, default_value = "ieee14")]
        case: String,
        /// Single attack variant; defaults to the configured mix.
        #[arg(long)]
        variant: Option<Variant>,
        /// Measure on the post-MTD grid while the attacker keeps the old one.
        #[arg(long)]
        mtd: bool,
        /// Seed of the perturbation search used with `--mtd`, independent of
        /// the sample seed so train and test sets can share one grid.
        #[arg(long, default_value_t = 0)]
        mtd_seed: u64,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Place D-FACTS devices and select a reactance perturbation.
    MtdPlan {
        #[arg(long, default_value = "ieee14")]
        case: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        candidates: Option<usize>,
        /// Comma-separated D-FACTS lines instead of spanning-tree placement.
        #[arg(long, value_delimiter = ',')]
        dfacts: Option<Vec<usize>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a CNN from scratch on a saved dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Meta-train an initialization on randomized topologies.
    MetaTrain {
        #[arg(long, default_value = "ieee14")]
        case: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Fine-tune a meta-learned initialization on a saved dataset.
    FineTune {
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Precision and recall of a checkpoint on a saved dataset.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run all approach/variant cells and write the comparison report.
    ReproduceTable2 {
        #[arg(long, default_value = "ieee14")]
        case: String,
        /// Reduced sizes for smoke runs.
        #[arg(long)]
        fast: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
}

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) => EXIT_USAGE,
        Error::Numerical(_)
        | Error::SingularSystem
        | Error::SingularTopology
        | Error::RankDeficient => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

fn kind(e: &Error) -> String {
    let debug = format!("{e:?}");
    debug
        .split(|c: char| !c.is_alphanumeric())
        .next()
        .unwrap_or("Error")
        .to_string()
}

fn diagnostic(kind: &str, message: &str, code: u8) {
    let v = serde_json::json!({ "error": kind, "message": message, "exit_code": code });
    eprintln!("{v}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            diagnostic("Usage", &e.kind().to_string(), EXIT_USAGE);
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            diagnostic(&kind(&e), &e.to_string(), code);
            ExitCode::from(code)
        }
    }
}
