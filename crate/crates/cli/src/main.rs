//! `elrdd`: empirical likelihood inference for regression discontinuity
//! designs from CSV input.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical failure. Reports go to
//! stdout (or `--output`), diagnostics to stderr.

mod commands;
mod ingest;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use elrdd_core::{DesignKind, Kernel};

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl From<elrdd_core::Error> for Failure {
    fn from(e: elrdd_core::Error) -> Self {
        if e.is_input() {
            Failure::Input(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "elrdd", version, about = "Empirical likelihood inference for regression discontinuity designs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Point estimate, test and confidence intervals for one design.
    Analyze(AnalyzeArgs),
    /// Joint and per-covariate continuity tests at the cutoff.
    Balance(BalanceArgs),
    /// Coverage study on a built-in data generating process.
    Simulate(SimulateArgs),
    /// Kernel constants, plus curvature and bandwidth diagnostics when data is given.
    Constants(ConstantsArgs),
}

fn parse_kernel(s: &str) -> Result<Kernel, String> {
    s.parse().map_err(|e: elrdd_core::Error| e.to_string())
}

fn parse_design(s: &str) -> Result<DesignKind, String> {
    s.parse().map_err(|e: elrdd_core::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Forcing variable column.
    #[arg(long, default_value = "x")]
    pub x: String,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub cutoff: f64,
}

#[derive(Debug, Args)]
pub struct InferenceArgs {
    #[arg(long, value_parser = parse_kernel, default_value = "triangular")]
    pub kernel: Kernel,
    /// Fixed bandwidth; bypasses the coverage-optimal selector.
    #[arg(long)]
    pub h: Option<f64>,
    /// Rerun at these multiples of the selected bandwidth.
    #[arg(long, value_delimiter = ',')]
    pub h_multipliers: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.9,0.95,0.99")]
    pub levels: Vec<f64>,
    /// Report only uncorrected intervals and tests.
    #[arg(long)]
    pub no_bartlett: bool,
    /// Skip interval inversion.
    #[arg(long)]
    pub no_intervals: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub inference: InferenceArgs,
    #[arg(long, value_parser = parse_design, default_value = "sharp")]
    pub design: DesignKind,
    /// Outcome column(s), comma separated for joint designs.
    #[arg(long, value_delimiter = ',', required = true)]
    pub y: Vec<String>,
    /// Treatment column for fuzzy designs.
    #[arg(long)]
    pub d: Option<String>,
    /// Covariate columns.
    #[arg(long, value_delimiter = ',')]
    pub z: Vec<String>,
    /// Null value(s) for the reported test; zero by default.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub null: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct BalanceArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub inference: InferenceArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    pub z: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// sharp_model1, fuzzy_model, sharp_cov_model2, multi_outcome:J or categorical_logit.
    #[arg(long)]
    pub dgp: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 2000)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "0.9,0.95,0.99")]
    pub levels: Vec<f64>,
    /// Bandwidth modes: true (known constants) and/or estimated.
    #[arg(long, value_delimiter = ',', default_value = "true,estimated")]
    pub modes: Vec<String>,
    #[arg(long, value_parser = parse_kernel, default_value = "triangular")]
    pub kernel: Kernel,
    /// Skip interval inversion (coverage only needs LR at the truth).
    #[arg(long)]
    pub no_intervals: bool,
    /// Worker threads; EL_RDD_THREADS is used when absent.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ConstantsArgs {
    #[arg(long, value_parser = parse_kernel, default_value = "triangular")]
    pub kernel: Kernel,
    /// Optional data for curvature and bandwidth diagnostics.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "x")]
    pub x: String,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub cutoff: f64,
    #[arg(long, value_parser = parse_design, default_value = "sharp")]
    pub design: DesignKind,
    #[arg(long, value_delimiter = ',')]
    pub y: Vec<String>,
    #[arg(long)]
    pub d: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub z: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let rendered = match &cli.command {
        Command::Analyze(args) => commands::analyze(args).map(|r| output::analyze(&r, cli.format)),
        Command::Balance(args) => commands::balance(args).map(|r| output::balance(&r, cli.format)),
        Command::Simulate(args) => commands::simulate(args).map(|r| output::simulate(&r, cli.format)),
        Command::Constants(args) => commands::constants(args).map(|r| output::constants(&r, cli.format)),
    };
    let text = match rendered {
        Ok(text) => text,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    match &cli.output {
        Some(path) => {
            if let Err(e) = std::fs::write(path, text) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return ExitCode::from(2);
            }
        }
        None => print!("{text}"),
    }
    ExitCode::SUCCESS
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(Failure::from(elrdd_core::Error::Input("x".into())).exit_code(), 2);
        let support = elrdd_core::Error::DataSupport { side: elrdd_core::Side::Plus, count: 1, needed: 10 };
        assert_eq!(Failure::from(support).exit_code(), 2);
        assert_eq!(Failure::from(elrdd_core::Error::Numerical("x".into())).exit_code(), 3);
        assert_eq!(Failure::from(elrdd_core::Error::Degenerate("x".into())).exit_code(), 3);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
