//! Report files: `{prefix}.csv`, `{prefix}.json` and `{prefix}.curves.tsv`.
//!
//! Every file is written to a temporary sibling and renamed into place.
//! Floats are printed in shortest round-trip form, so identical outcomes
//! give identical bytes.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::experiments::Outcome;

pub const CSV_HEADER: &str =
    "experiment,series,model,F_id,K,d,bracketNN_T,normalized_residual,wallclock_ms,config_hash";

/// Paths of the three report files for an output prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportPaths {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub curves: PathBuf,
}

impl ReportPaths {
    pub fn for_prefix(prefix: &str) -> Self {
        Self {
            csv: PathBuf::from(format!("{prefix}.csv")),
            json: PathBuf::from(format!("{prefix}.json")),
            curves: PathBuf::from(format!("{prefix}.curves.tsv")),
        }
    }
}

pub fn csv(config: &ExperimentConfig, hash: &str, outcome: &Outcome) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &outcome.rows {
        let ms = r.wallclock_ms.map(|v| format!("{v:.3}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{:e},{:e},{},{}",
            config.experiment.id(),
            r.series,
            r.model,
            r.f_id,
            r.steps,
            r.d,
            r.bracket_nn,
            r.normalized_residual,
            ms,
            hash
        )
        .expect("writing to a string");
    }
    out
}

pub fn curves(outcome: &Outcome) -> String {
    let mut out = String::new();
    for (j, c) in outcome.curves.iter().enumerate() {
        if j > 0 {
            out.push('\n');
        }
        writeln!(out, "# {}", c.name).expect("writing to a string");
        writeln!(out, "{}\t{}", c.x_label, c.y_label).expect("writing to a string");
        for (x, y) in &c.points {
            writeln!(out, "{x:e}\t{y:e}").expect("writing to a string");
        }
    }
    out
}

pub fn json(config: &ExperimentConfig, hash: &str, outcome: &Outcome, wallclock_ms: Option<f64>) -> String {
    let mut provenance = json!({
        "config_hash": hash,
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "experiment": config.experiment.id(),
        "seed": config.seed,
        "node_cap": config.node_cap(),
        "models": outcome.models,
    });
    if let Some(ms) = wallclock_ms {
        provenance["wallclock_ms"] = json!(ms);
    }
    let doc = json!({
        "provenance": provenance,
        "config": config,
        "rows": outcome.rows,
        "checks": outcome.checks,
        "details": outcome.details,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("report serializes");
    text.push('\n');
    text
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut file = std::fs::File::create(&tmp)?;
        file.write_all(contents.as_bytes())?;
        file.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_all(
    config: &ExperimentConfig,
    outcome: &Outcome,
    wallclock_ms: Option<f64>,
) -> Result<ReportPaths> {
    let hash = config.hash();
    let paths = ReportPaths::for_prefix(&config.output);
    write_atomic(&paths.csv, &csv(config, &hash, outcome))?;
    write_atomic(&paths.json, &json(config, &hash, outcome, wallclock_ms))?;
    write_atomic(&paths.curves, &curves(outcome))?;
    Ok(paths)
}
