use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use orthres_cli::{catalog, verify, CliError, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "orthres", version, about = "Orthogonal residuals of BSDEs on finite filtrations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment config and write its reports.
    Run { config: PathBuf },
    /// Validate a config and print its plan without running it.
    Verify { config: PathBuf },
    /// List model, terminal map, driver and coefficient ids.
    Catalog,
}

fn fail(err: &CliError) -> ExitCode {
    let line = err.to_string().replace('\n', " ");
    eprintln!("error: {line}");
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Catalog => {
            print!("{}", catalog::listing());
            ExitCode::SUCCESS
        }
        Command::Verify { config } => match ExperimentConfig::load(&config) {
            Ok(c) => {
                print!("{}", verify::Plan::of(&c).render(&c));
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Command::Run { config } => match orthres_cli::run(&config) {
            Ok(summary) => {
                for check in &summary.outcome.checks {
                    let tag = if check.pass { "PASS" } else { "FAIL" };
                    println!("{tag} {}: {}", check.name, check.detail);
                }
                println!("wrote {}", summary.paths.csv.display());
                println!("wrote {}", summary.paths.json.display());
                println!("wrote {}", summary.paths.curves.display());
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
    }
}
