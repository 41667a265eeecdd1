mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Fit, simulate and plan vaccination campaigns on SEIR-type models.
#[derive(Debug, Parser)]
#[command(name = "vaxplan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

/// Options shared by every subcommand. Flags override config file values.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Flags {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Observation CSV (`date,location,detected_active,deaths_cum,recovered_cum`).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Fitted parameter file, or the name of a built-in scenario (`spain`, `valencia`).
    #[arg(long, global = true)]
    pub params: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed of every random stream; required by `fit`, `plan` and `compare`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Daily doses for `simulate`, total doses for `plan`, comma-separated budgets for `compare`.
    #[arg(long, global = true)]
    pub doses: Option<String>,
    /// First date of the fitted, reported or campaign window.
    #[arg(long, global = true)]
    pub from: Option<String>,
    /// Last date of the fitted, simulated or campaign window.
    #[arg(long, global = true)]
    pub to: Option<String>,
    /// Dose schedule CSV (`date,location,group,first_doses,second_doses`) for `simulate`.
    #[arg(long, global = true)]
    pub schedule: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit piecewise coefficients to observations, one parameter file per location.
    Fit,
    /// Integrate a fitted or built-in model and summarize deaths and the detected peak.
    Simulate,
    /// Emit the greedy dose schedule for one total budget.
    Plan,
    /// Compare greedy, random and no-vaccination arms over a list of budgets.
    Compare,
    /// Reproductive number, fixed points and their stability for the vital-dynamics model.
    Equilibria,
}

/// A failed command and its exit status.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<vaxplan::Error> for Failure {
    fn from(e: vaxplan::Error) -> Self {
        use vaxplan::Error as E;
        let text = e.to_string();
        if e.is_numerical() {
            return Failure::Numerical(text);
        }
        match e {
            E::Schema { .. } | E::Csv(_) | E::EmptyObservations => Failure::Data(text),
            E::Segment { source, .. } | E::Gain { source, .. } | E::Campaign { source, .. } => {
                match Failure::from(*source) {
                    Failure::Config(_) => Failure::Config(text),
                    Failure::Data(_) => Failure::Data(text),
                    Failure::Numerical(_) => Failure::Numerical(text),
                }
            }
            _ => Failure::Config(text),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit => commands::fit(&cli.flags),
        Command::Simulate => commands::simulate(&cli.flags),
        Command::Plan => commands::plan(&cli.flags),
        Command::Compare => commands::compare(&cli.flags),
        Command::Equilibria => commands::equilibria(&cli.flags),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("vaxplan: {f}");
            ExitCode::from(f.code())
        }
    }
}
