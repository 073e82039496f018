//! Experiment configuration files.
//!
//! A config is a single JSON object. Catalog entries (model, terminal map,
//! driver, SDE coefficients) are tagged objects using the ids printed by
//! `orthres catalog`; unknown ids and unknown fields are rejected.

use std::path::Path;

use orthres::bsde::{CascadeOptions, DriverConfig, RegularityGrid};
use orthres::forward::CoeffSpec;
use orthres::models::ModelConfig;
use orthres::mollify::{MapSpec, ScanGrid};
use orthres::tolerances;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Environment variable overriding the node cap of every model.
pub const NODE_CAP_ENV: &str = "ORTHRES_NODE_CAP";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Experiment {
    #[serde(rename = "residual_sweep")]
    ResidualSweep,
    #[serde(rename = "vanishing_N")]
    VanishingN,
    #[serde(rename = "dual_check")]
    DualCheck,
    #[serde(rename = "cascade")]
    Cascade,
    #[serde(rename = "comparison_campaign")]
    ComparisonCampaign,
    #[serde(rename = "mollify_sweep")]
    MollifySweep,
    #[serde(rename = "regularity_scan")]
    RegularityScan,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::ResidualSweep,
        Experiment::VanishingN,
        Experiment::DualCheck,
        Experiment::Cascade,
        Experiment::ComparisonCampaign,
        Experiment::MollifySweep,
        Experiment::RegularityScan,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Experiment::ResidualSweep => "residual_sweep",
            Experiment::VanishingN => "vanishing_N",
            Experiment::DualCheck => "dual_check",
            Experiment::Cascade => "cascade",
            Experiment::ComparisonCampaign => "comparison_campaign",
            Experiment::MollifySweep => "mollify_sweep",
            Experiment::RegularityScan => "regularity_scan",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Experiment::ResidualSweep => "orthogonal residual of F(M_K) over the step list",
            Experiment::VanishingN => "residual of the BSDE solution for F and its mollifications",
            Experiment::DualCheck => "control representation against the truncated-driver solution",
            Experiment::Cascade => "quadratic driver through the monotone cascade, with bounds",
            Experiment::ComparisonCampaign => "seeded campaign of ordered Lipschitz data",
            Experiment::MollifySweep => "Lipschitz constants and residuals of mollified maps",
            Experiment::RegularityScan => "restart value u(t, x, m) on a grid with difference quotients",
        }
    }
}

/// Refinement and parameter lists.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lists {
    /// Step counts `K`; the model's own step count when empty.
    pub steps: Vec<usize>,
    /// Mollification variances.
    pub epsilons: Vec<f64>,
    /// Truncation radii; also the cascade's `p` chain when given.
    pub p: Vec<f64>,
    /// Inf-convolution indices for the cascade's `n` chain.
    pub n: Vec<f64>,
}

/// Thresholds used to tag checks and detect invariant violations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Exact-representation threshold for residuals on complete models.
    pub residual: f64,
    /// Cascade increments and monotonicity violations.
    pub cascade: f64,
    /// Excess of `|Y|` over the a priori bound.
    pub bound: f64,
    /// Comparison violations.
    pub comparison: f64,
    /// Within-group spread of Markovian solutions.
    pub markov: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            residual: 1e-12,
            cascade: tolerances::CASCADE,
            bound: tolerances::BOUND,
            comparison: tolerances::COMPARISON,
            markov: 1e-10,
        }
    }
}

/// Settings of the seeded comparison campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignOptions {
    pub runs: usize,
    /// Largest `L_z` of the random drivers.
    pub max_lipschitz_z: f64,
}

impl Default for CampaignOptions {
    fn default() -> Self {
        Self { runs: 100, max_lipschitz_z: 1.0 }
    }
}

/// Control grids of the dual check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualOptions {
    pub beta_points: usize,
    pub nu_points: usize,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self { beta_points: 5, nu_points: 9 }
    }
}

fn identity() -> CoeffSpec {
    CoeffSpec::Identity
}

fn zero_driver() -> DriverConfig {
    DriverConfig::Zero
}

fn default_quad_nodes() -> usize {
    64
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub model: ModelConfig,
    /// Terminal map `F`.
    pub terminal: MapSpec,
    #[serde(default = "zero_driver")]
    pub driver: DriverConfig,
    #[serde(default = "identity")]
    pub coeffs: CoeffSpec,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub lists: Lists,
    #[serde(default)]
    pub seed: u64,
    /// Path prefix of the report files.
    pub output: String,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub cascade: CascadeOptions,
    #[serde(default)]
    pub campaign: CampaignOptions,
    #[serde(default)]
    pub dual: DualOptions,
    /// Also run the unmollified map in `vanishing_N`.
    #[serde(default = "default_true")]
    pub include_raw: bool,
    #[serde(default = "default_quad_nodes")]
    pub quad_nodes: usize,
    /// Scan grid for `mollify_sweep`; `[-1, 1]` with spacing `1e-4` by default.
    #[serde(default)]
    pub scan: Option<ScanGrid>,
    /// Restart grid for `regularity_scan`.
    #[serde(default)]
    pub regularity: Option<RegularityGrid>,
    /// Record wall-clock times (makes reports non-reproducible).
    #[serde(default)]
    pub record_wallclock: bool,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: Self =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("malformed config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Step counts of the sweep, the model's own when the list is empty.
    pub fn steps(&self) -> Vec<usize> {
        if self.lists.steps.is_empty() {
            vec![self.model.steps]
        } else {
            self.lists.steps.clone()
        }
    }

    /// Model configuration with `K` steps and the effective node cap.
    pub fn model_at(&self, steps: usize) -> ModelConfig {
        let mut model = self.model.with_steps(steps);
        if let Some(cap) = env_node_cap() {
            model.node_cap = Some(cap);
        }
        model
    }

    pub fn node_cap(&self) -> usize {
        self.model_at(self.model.steps).node_cap.unwrap_or(tolerances::NODE_CAP)
    }

    /// Cascade options with the list and tolerance overrides applied.
    pub fn cascade_options(&self) -> CascadeOptions {
        let mut options = self.cascade.clone();
        if !self.lists.p.is_empty() {
            options.p_list = self.lists.p.clone();
        }
        if !self.lists.n.is_empty() {
            options.n_list = self.lists.n.clone();
        }
        options.tol = self.tolerances.cascade;
        options
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.output.trim().is_empty() {
            return bad("output prefix is empty".into());
        }
        if self.model.steps == 0 || self.lists.steps.contains(&0) {
            return bad("step counts must be positive".into());
        }
        for (name, list) in [("epsilons", &self.lists.epsilons), ("p", &self.lists.p), ("n", &self.lists.n)] {
            if let Some(v) = list.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return bad(format!("lists.{name} entries must be positive, got {v}"));
            }
        }
        let tol = &self.tolerances;
        for (name, v) in [
            ("residual", tol.residual),
            ("cascade", tol.cascade),
            ("bound", tol.bound),
            ("comparison", tol.comparison),
            ("markov", tol.markov),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("tolerances.{name} must be non-negative, got {v}"));
            }
        }
        self.driver.build().map_err(|e| CliError::Config(format!("driver: {e}")))?;
        let coeffs =
            self.coeffs.build(self.model.dim).map_err(|e| CliError::Config(format!("coeffs: {e}")))?;
        let arity = match self.experiment {
            Experiment::ResidualSweep | Experiment::MollifySweep => self.model.dim,
            _ => coeffs.state_dim() + self.model.dim,
        };
        self.terminal.build(arity).map_err(|e| CliError::Config(format!("terminal: {e}")))?;
        match self.experiment {
            Experiment::MollifySweep if self.lists.epsilons.is_empty() => {
                return bad("mollify_sweep needs lists.epsilons".into())
            }
            Experiment::VanishingN if self.lists.epsilons.is_empty() && !self.include_raw => {
                return bad("vanishing_N has neither epsilons nor the raw map to run".into())
            }
            Experiment::DualCheck if self.lists.p.is_empty() => return bad("dual_check needs lists.p".into()),
            Experiment::RegularityScan if self.regularity.is_none() => {
                return bad("regularity_scan needs a regularity grid".into())
            }
            Experiment::ComparisonCampaign if self.campaign.runs == 0 => {
                return bad("comparison campaign needs at least one run".into())
            }
            _ => {}
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form without the output prefix.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output.clear();
        let text = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

pub fn env_node_cap() -> Option<usize> {
    std::env::var(NODE_CAP_ENV).ok().and_then(|v| v.trim().parse().ok())
}
