//! `fret`: condition checks, simulation and convergence verification for
//! perturbed semi-Markov processes from the command line.
//!
//! Exit status is 0 on success, 1 when a check or verification fails on its
//! own terms, and 2 on usage, config or precondition errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fret_core::{ConditionId, Theorem};

#[derive(Parser, Debug)]
#[command(name = "fret", version, about = "First-rare-event toolkit for perturbed semi-Markov processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stationary distribution of a stochastic matrix (JSON or CSV).
    Stationary { matrix: PathBuf },
    /// Run condition checkers and compare verdicts with registered expectations.
    Check {
        /// Builtin scenario name, scenario spec file or kernel file.
        scenario: String,
        #[arg(long, value_delimiter = ',')]
        conditions: Option<Vec<ConditionId>>,
    },
    /// Sample first-rare-event functionals at one ε into a CSV file.
    Simulate {
        scenario: String,
        #[arg(long)]
        eps: f64,
        #[arg(short = 'n')]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Time points for ξ(t); defaults to the scenario grid.
        #[arg(long, value_delimiter = ',')]
        t: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare exact and simulated routes with the limit law over an ε-grid.
    Verify {
        theorem: Theorem,
        scenario: String,
        #[arg(long, value_delimiter = ',')]
        eps_grid: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        s: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        t: Option<Vec<f64>>,
        #[arg(short = 'n')]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Run even when a precondition checker fails; the report is watermarked.
        #[arg(long)]
        force: bool,
    },
    /// Scenario registry.
    Scenario {
        #[command(subcommand)]
        action: ScenarioAction,
    },
}

#[derive(Subcommand, Debug)]
enum ScenarioAction {
    /// Print the builtin scenarios.
    List,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Stationary { matrix } => commands::stationary(&matrix),
        Command::Check { scenario, conditions } => commands::check(&scenario, conditions.as_deref()),
        Command::Simulate { scenario, eps, n, seed, t, out } => commands::simulate(&commands::SimulateArgs {
            scenario: &scenario,
            eps,
            n,
            seed,
            t,
            out: &out,
        }),
        Command::Verify { theorem, scenario, eps_grid, s, t, n, seed, out, csv, force } => {
            commands::verify(&commands::VerifyArgs {
                theorem,
                scenario: &scenario,
                eps_grid,
                s,
                t,
                n,
                seed,
                out: &out,
                csv: csv.as_deref(),
                force,
            })
        }
        Command::Scenario { action: ScenarioAction::List } => commands::scenario_list(),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
