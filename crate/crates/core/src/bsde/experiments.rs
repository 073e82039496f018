//! Experiments built on the solvers: the size of the orthogonal part under
//! refinement, the Markov property of solutions, and the regularity of the
//! value function `u(t, x, m)`.

use serde::{Deserialize, Serialize};

use super::cascade::{solve_auto, CascadeOptions};
use super::driver::{DriverConfig, DriverSpec};
use super::lipschitz::BsdeContext;
use crate::forward::{euler_forward, shift_start, CoeffSpec, SdeCoeffs};
use crate::ftree::{predictable_bracket, AdaptedProcess, ClockAndFactor, ScenarioTree};
use crate::gkw::{group_spread, terminal_values};
use crate::models::{self, Model, ModelConfig};
use crate::mollify::{mollify, MapSpec, StateMap};
use crate::numeric::Trend;
use crate::{tolerances, Error, Result};

/// The pair `(X, M)` as one process of dimension `n + d`; terminal maps
/// are evaluated on it.
pub fn joint_state(tree: &ScenarioTree, x: &AdaptedProcess, m: &AdaptedProcess) -> Result<AdaptedProcess> {
    AdaptedProcess::from_fn(tree, x.dim() + m.dim(), |i| {
        let mut v = x.get(i).to_vec();
        v.extend_from_slice(m.get(i));
        v
    })
}

/// A model with its clock, forward state and terminal value, ready for a
/// backward solve.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub model: Model,
    pub clock: ClockAndFactor,
    pub x: AdaptedProcess,
    pub zeta: Vec<f64>,
}

impl Prepared {
    pub fn context(&self) -> Result<BsdeContext<'_>> {
        BsdeContext::new(&self.model.tree, &self.model.martingale, &self.clock, Some(&self.x))
    }
}

/// Builds the model, runs the forward scheme from `x0` (zeros when absent)
/// and evaluates `f(X_K, M_K)`.
pub fn prepare(
    config: &ModelConfig,
    coeffs: &SdeCoeffs,
    x0: Option<&[f64]>,
    f: &dyn StateMap,
) -> Result<Prepared> {
    let model = models::build(config)?;
    let clock = predictable_bracket(&model.tree, &model.martingale)?;
    let zeros = vec![0.0; coeffs.state_dim()];
    let x = euler_forward(&model.tree, &model.martingale, &clock, coeffs, x0.unwrap_or(&zeros))?;
    let joint = joint_state(&model.tree, &x, &model.martingale)?;
    let zeta = terminal_values(&model.tree, &joint, f)?;
    Ok(Prepared { model, clock, x, zeta })
}

fn default_quad_nodes() -> usize {
    64
}

fn default_true() -> bool {
    true
}

/// Configuration of a refinement experiment with mollified terminal maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VanishingSetup {
    pub model: ModelConfig,
    #[serde(default = "identity")]
    pub coeffs: CoeffSpec,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    pub terminal: MapSpec,
    pub driver: DriverConfig,
    /// Mollification widths; each gives one series.
    #[serde(default)]
    pub epsilons: Vec<f64>,
    /// Also run the unmollified map.
    #[serde(default = "default_true")]
    pub include_raw: bool,
    pub steps: Vec<usize>,
    #[serde(default = "default_quad_nodes")]
    pub quad_nodes: usize,
    #[serde(default)]
    pub cascade: CascadeOptions,
}

fn identity() -> CoeffSpec {
    CoeffSpec::Identity
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VanishingRow {
    pub steps: usize,
    /// `None` for the unmollified map.
    pub epsilon: Option<f64>,
    pub nodes: usize,
    pub y0: f64,
    /// `E[[N]_T]`.
    pub bracket_nn: f64,
    /// `E[[N]_T]` over the total conditional variance of `Y`.
    pub normalized_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VanishingSeries {
    pub epsilon: Option<f64>,
    pub trend: Trend,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VanishingReport {
    pub rows: Vec<VanishingRow>,
    pub series: Vec<VanishingSeries>,
}

impl VanishingReport {
    pub fn row(&self, steps: usize, epsilon: Option<f64>) -> Option<&VanishingRow> {
        self.rows.iter().find(|r| r.steps == steps && r.epsilon == epsilon)
    }
}

/// Solves the backward equation for `F` and its mollifications on each
/// refinement and records `E[[N]_T]`.
pub fn vanishing_n_experiment(setup: &VanishingSetup) -> Result<VanishingReport> {
    if setup.steps.is_empty() {
        return Err(Error::InvalidParameter("refinement list is empty".into()));
    }
    let coeffs = setup.coeffs.build(setup.model.dim)?;
    let driver = setup.driver.build()?;
    let arity = coeffs.state_dim() + setup.model.dim;
    let base = setup.terminal.build(arity)?;
    let mut maps: Vec<(Option<f64>, Box<dyn StateMap>)> = Vec::new();
    if setup.include_raw {
        maps.push((None, Box::new(base.clone())));
    }
    for &eps in &setup.epsilons {
        maps.push((Some(eps), Box::new(mollify(&base, eps, setup.quad_nodes)?)));
    }
    let mut steps = setup.steps.clone();
    steps.sort_unstable();
    steps.dedup();
    let mut rows = Vec::new();
    for &k in &steps {
        let config = setup.model.with_steps(k);
        for (eps, f) in &maps {
            let prepared = prepare(&config, &coeffs, setup.x0.as_deref(), f.as_ref())?;
            rows.push(solve_row(&prepared, &driver, &setup.cascade, k, *eps)?);
        }
    }
    let series = maps
        .iter()
        .map(|(eps, _)| {
            let pts: Vec<&VanishingRow> = rows.iter().filter(|r| r.epsilon == *eps).collect();
            let xs: Vec<f64> = pts.iter().map(|r| r.steps as f64).collect();
            let ys: Vec<f64> = pts.iter().map(|r| r.bracket_nn).collect();
            VanishingSeries { epsilon: *eps, trend: Trend::of(&xs, &ys) }
        })
        .collect();
    Ok(VanishingReport { rows, series })
}

fn solve_row(
    prepared: &Prepared,
    driver: &DriverSpec,
    cascade: &CascadeOptions,
    steps: usize,
    epsilon: Option<f64>,
) -> Result<VanishingRow> {
    let ctx = prepared.context()?;
    let solved = solve_auto(&ctx, &prepared.zeta, driver, cascade)?;
    let sol = &solved.solution;
    let total = sol.diagnostics.cond_var_profile.first().copied().unwrap_or(0.0);
    Ok(VanishingRow {
        steps,
        epsilon,
        nodes: prepared.model.tree.n_nodes(),
        y0: sol.y0(),
        bracket_nn: sol.bracket_nn(),
        normalized_residual: if total > 0.0 { sol.bracket_nn() / total } else { 0.0 },
        converged: solved.converged,
    })
}

/// Within-group spread of a solution when nodes are grouped by the value
/// of `(X, M)` on each level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarkovReport {
    pub spread: f64,
    pub tol: f64,
}

impl MarkovReport {
    pub fn holds(&self) -> bool {
        self.spread <= self.tol
    }
}

pub fn markov_grouping_check(
    tree: &ScenarioTree,
    x: Option<&AdaptedProcess>,
    m: &AdaptedProcess,
    y: &AdaptedProcess,
    tol: f64,
) -> MarkovReport {
    let mut keys = vec![m];
    if let Some(x) = x {
        keys.insert(0, x);
    }
    MarkovReport { spread: group_spread(tree, &keys, y, tolerances::GROUPING), tol }
}

/// Starting points of a regularity scan: one node on `level` and a grid
/// of restart states `(x, m)` (one-dimensional `X` and `M`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularityGrid {
    pub level: usize,
    /// Restart node on `level`; the first node of the level by default.
    #[serde(default)]
    pub node: Option<usize>,
    pub x: Vec<f64>,
    pub m: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityReport {
    pub x: Vec<f64>,
    pub m: Vec<f64>,
    /// `u[i * m.len() + j] = u(t, x_i, m_j)`.
    pub u: Vec<f64>,
    pub sup: f64,
    pub inf: f64,
    /// `exp(b (C_K - C_t)) (|F|_inf + a (C_K - C_t))`, largest over restarts.
    pub clock_bound: f64,
    /// `exp(b) (|F|_inf + a)`.
    pub unit_bound: f64,
    /// Largest central first difference quotient in `x` and in `m`.
    pub max_dx: f64,
    pub max_dm: f64,
    /// Largest second difference quotient in either direction.
    pub max_second: f64,
}

impl RegularityReport {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.u[i * self.m.len() + j]
    }
}

/// `u(t, x, m) = Y_t` of the solution restarted from `(x, m)` at the chosen
/// node, over the grid, with difference quotients.
pub fn regularity_scan(
    model: &Model,
    coeffs: &SdeCoeffs,
    f: &dyn StateMap,
    driver: &DriverSpec,
    cascade: &CascadeOptions,
    grid: &RegularityGrid,
) -> Result<RegularityReport> {
    if model.martingale.dim() != 1 || coeffs.state_dim() != 1 {
        return Err(Error::Unsupported("regularity scans need one-dimensional X and M".into()));
    }
    if grid.x.is_empty() || grid.m.is_empty() {
        return Err(Error::InvalidParameter("regularity grid is empty".into()));
    }
    let tree = &model.tree;
    if grid.level >= tree.steps() {
        return Err(Error::LevelOutOfRange { level: grid.level, levels: tree.steps() });
    }
    let node = grid.node.unwrap_or(tree.level(grid.level).start);
    let clock = predictable_bracket(tree, &model.martingale)?;
    let growth = driver.growth();
    let mut u = Vec::with_capacity(grid.x.len() * grid.m.len());
    let mut clock_bound: f64 = 0.0;
    let mut f_sup: f64 = 0.0;
    for &x in &grid.x {
        for &m in &grid.m {
            let restart = shift_start(tree, &model.martingale, &clock, grid.level, node, &[x], &[m], coeffs)?;
            let joint = joint_state(&restart.tree, &restart.x, &restart.m)?;
            let zeta = terminal_values(&restart.tree, &joint, f)?;
            let ctx = BsdeContext::new(&restart.tree, &restart.m, &restart.clock, Some(&restart.x))?;
            let solved = solve_auto(&ctx, &zeta, driver, cascade)?;
            let sup = zeta.iter().map(|v| v.abs()).fold(0.0, f64::max);
            f_sup = f_sup.max(sup);
            let elapsed = restart.clock.terminal_max(&restart.tree) - restart.clock.c.value(0);
            clock_bound = clock_bound.max((growth.b * elapsed).exp() * (sup + growth.a * elapsed));
            u.push(solved.solution.y0());
        }
    }
    let (nx, nm) = (grid.x.len(), grid.m.len());
    let at = |i: usize, j: usize| u[i * nm + j];
    let (mut max_dx, mut max_dm, mut max_second) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..nx {
        for j in 0..nm {
            if i > 0 && i + 1 < nx {
                let (hl, hr) = (grid.x[i] - grid.x[i - 1], grid.x[i + 1] - grid.x[i]);
                max_dx = max_dx.max(((at(i + 1, j) - at(i - 1, j)) / (hl + hr)).abs());
                let second =
                    2.0 * ((at(i + 1, j) - at(i, j)) / hr - (at(i, j) - at(i - 1, j)) / hl) / (hl + hr);
                max_second = max_second.max(second.abs());
            }
            if j > 0 && j + 1 < nm {
                let (hl, hr) = (grid.m[j] - grid.m[j - 1], grid.m[j + 1] - grid.m[j]);
                max_dm = max_dm.max(((at(i, j + 1) - at(i, j - 1)) / (hl + hr)).abs());
                let second =
                    2.0 * ((at(i, j + 1) - at(i, j)) / hr - (at(i, j) - at(i, j - 1)) / hl) / (hl + hr);
                max_second = max_second.max(second.abs());
            }
        }
    }
    Ok(RegularityReport {
        sup: u.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        inf: u.iter().copied().fold(f64::INFINITY, f64::min),
        x: grid.x.clone(),
        m: grid.m.clone(),
        u,
        clock_bound,
        unit_bound: growth.b.exp() * (f_sup + growth.a),
        max_dx,
        max_dm,
        max_second,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;
    use crate::mollify::MapSpec;

    #[test]
    fn smooth_terminal_residual_shrinks() {
        let setup = VanishingSetup {
            model: ModelConfig::new(ModelKind::Trinomial, 8),
            coeffs: CoeffSpec::Identity,
            x0: None,
            terminal: MapSpec::Sine { frequency: 1.0 },
            driver: DriverConfig::Truncated { gamma: 1.0, b: 0.2, eta: 0.0, p: 1.0 },
            epsilons: vec![],
            include_raw: true,
            steps: vec![8, 16, 32],
            quad_nodes: 64,
            cascade: CascadeOptions::default(),
        };
        let report = vanishing_n_experiment(&setup).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert!(report.series[0].trend.strictly_decreasing, "{report:?}");
    }

    #[test]
    fn markov_check_on_a_lattice() {
        let model = models::build(&ModelConfig::new(ModelKind::Binary, 10)).unwrap();
        let coeffs = CoeffSpec::Identity.build(1).unwrap();
        let f = MapSpec::Sine { frequency: 1.0 }.build(2).unwrap();
        let prepared = prepare(&ModelConfig::new(ModelKind::Binary, 10), &coeffs, None, &f).unwrap();
        let ctx = prepared.context().unwrap();
        let driver = DriverConfig::Truncated { gamma: 1.0, b: 0.5, eta: 0.1, p: 2.0 }.build().unwrap();
        let sol = super::super::solve_lipschitz(&ctx, &prepared.zeta, &driver).unwrap();
        let report = markov_grouping_check(&model.tree, Some(&prepared.x), &model.martingale, &sol.y, 1e-10);
        assert!(report.holds());
    }

    #[test]
    fn regularity_of_a_martingale_value() {
        // f = 0 and F(x, m) = sin(x): u(t, x, m) = E[sin(x + W)] = sin(x) E[cos W]
        let model = models::build(&ModelConfig::new(ModelKind::Binary, 12)).unwrap();
        let coeffs = CoeffSpec::Identity.build(1).unwrap();
        let f = MapSpec::Sine { frequency: 1.0 }.build(2).unwrap();
        let grid = RegularityGrid { level: 4, node: None, x: vec![-0.2, 0.0, 0.2], m: vec![0.0, 0.5] };
        let driver = DriverConfig::Zero.build().unwrap();
        let r = regularity_scan(&model, &coeffs, &f, &driver, &CascadeOptions::default(), &grid).unwrap();
        let h = (1.0f64 / 12.0).sqrt();
        let damp = (h.cos()).powi(8);
        for (i, &x) in grid.x.iter().enumerate() {
            for j in 0..2 {
                assert!((r.at(i, j) - x.sin() * damp).abs() < 1e-12);
            }
        }
        assert!(r.max_dm < 1e-12);
        assert!(r.max_dx <= 1.0 && r.sup <= r.unit_bound);
    }
}
