//! Experiment runner for the `orthres` laboratory.
//!
//! `run` executes a JSON experiment config and writes a CSV table, a JSON
//! trace with provenance and a TSV file of convergence curves; `verify`
//! prints the plan of a config without running it; `catalog` lists the
//! ids a config may reference.
//!
//! Exit codes: 0 success, 1 i/o failure, 2 invariant violation or solver
//! failure, 3 configuration error.

pub mod catalog;
pub mod config;
pub mod error;
pub mod experiments;
pub mod report;
pub mod verify;

use std::path::Path;
use std::time::Instant;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use experiments::Outcome;
pub use report::ReportPaths;

/// Result of a successful `run`.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub paths: ReportPaths,
    pub outcome: Outcome,
}

/// Runs a parsed config and writes its reports. Reports are written even
/// when an invariant fails; the error is returned afterwards.
pub fn run_config(config: &ExperimentConfig) -> Result<RunSummary> {
    let plan = verify::Plan::of(config);
    if let Some(r) = plan.rows.iter().find(|r| r.over_cap) {
        return Err(CliError::Config(format!(
            "K={} needs an estimated {} nodes, above the cap {}",
            r.steps, r.nodes, plan.cap
        )));
    }
    let start = Instant::now();
    let outcome = experiments::run(config)?;
    let wallclock = config.record_wallclock.then(|| start.elapsed().as_secs_f64() * 1e3);
    let paths = report::write_all(config, &outcome, wallclock)?;
    let violations = outcome.violations();
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|c| format!("{} ({})", c.name, c.detail)).collect();
        return Err(CliError::Invariant(list.join("; ")));
    }
    Ok(RunSummary { paths, outcome })
}

pub fn run(path: &Path) -> Result<RunSummary> {
    run_config(&ExperimentConfig::load(path)?)
}

pub fn verify(path: &Path) -> Result<verify::Plan> {
    let config = ExperimentConfig::load(path)?;
    Ok(verify::Plan::of(&config))
}
