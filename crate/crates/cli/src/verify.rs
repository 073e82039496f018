//! Pre-flight plan: validated config, sweep points and node estimates.

use std::fmt::Write as _;

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct PlanRow {
    pub steps: usize,
    pub nodes: u128,
    pub over_cap: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub rows: Vec<PlanRow>,
    pub cap: usize,
    /// Solves per step count (series times runs).
    pub solves_per_step: usize,
}

impl Plan {
    pub fn of(config: &ExperimentConfig) -> Self {
        let cap = config.node_cap();
        let rows = config
            .steps()
            .into_iter()
            .map(|k| {
                let nodes = config.model_at(k).estimate_nodes();
                PlanRow { steps: k, nodes, over_cap: nodes > cap as u128 }
            })
            .collect();
        use crate::config::Experiment as E;
        let solves_per_step = match config.experiment {
            E::VanishingN => config.lists.epsilons.len() + usize::from(config.include_raw),
            E::DualCheck => config.lists.p.len(),
            E::ComparisonCampaign => 2 * config.campaign.runs,
            E::MollifySweep => config.lists.epsilons.len(),
            E::RegularityScan => {
                let g = config.regularity.as_ref().map_or(0, |g| g.x.len() * g.m.len());
                g + 1
            }
            E::ResidualSweep | E::Cascade => 1,
        };
        Self { rows, cap, solves_per_step }
    }

    pub fn exceeds_cap(&self) -> bool {
        self.rows.iter().any(|r| r.over_cap)
    }

    pub fn render(&self, config: &ExperimentConfig) -> String {
        let mut out = String::new();
        let w = &mut out;
        writeln!(w, "experiment  {}", config.experiment.id()).unwrap();
        writeln!(w, "model       {} (d = {})", config.model.kind.id(), config.model.dim).unwrap();
        writeln!(w, "terminal    {}", config.terminal.id()).unwrap();
        writeln!(w, "driver      {}", config.driver.id()).unwrap();
        writeln!(w, "config hash {}", config.hash()).unwrap();
        writeln!(w, "node cap    {}", self.cap).unwrap();
        writeln!(w, "solves per K {}", self.solves_per_step).unwrap();
        writeln!(w).unwrap();
        writeln!(w, "{:>6}  {:>24}  status", "K", "estimated nodes").unwrap();
        for r in &self.rows {
            let status = if r.over_cap { "WARN exceeds node cap" } else { "ok" };
            writeln!(w, "{:>6}  {:>24}  {}", r.steps, r.nodes, status).unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(text: &str) -> ExperimentConfig {
        ExperimentConfig::parse(text).unwrap()
    }

    #[test]
    fn recombining_trinomial_is_quadratic_in_k() {
        let c = config(
            r#"{"experiment": "residual_sweep", "model": {"kind": "trinomial", "steps": 64},
            "terminal": {"id": "sine"}, "output": "x"}"#,
        );
        let plan = Plan::of(&c);
        // a trinomial lattice has 2k + 1 nodes on level k
        assert_eq!(plan.rows[0].nodes, 65 * 65);
        assert!(!plan.exceeds_cap());
    }

    #[test]
    fn product_noise_fan_out_is_flagged() {
        let c = config(
            r#"{"experiment": "residual_sweep", "model": {"kind": "product_noise", "steps": 20},
            "terminal": {"id": "sine"}, "output": "x"}"#,
        );
        let plan = Plan::of(&c);
        assert!(plan.exceeds_cap());
        assert!(plan.render(&c).contains("WARN"));
    }
}
