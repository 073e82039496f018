//! Martingale model zoo: Markov walks that approximate continuous
//! martingales, a filtration enlarged by independent noise, and a jump
//! counterexample.
//!
//! Every builder returns a validated martingale. Models whose filtration is
//! generated by the walk itself are built as recombining lattices unless
//! `recombine` is switched off; models that carry extra information (or a
//! state-dependent step) are built as full trees, guarded by a node cap.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::ftree::{is_martingale, AdaptedProcess, EdgeSpec, ScenarioTree, TimeGrid};
use crate::{tolerances, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Binary,
    Trinomial,
    TimeChanged,
    ProductNoise,
    CompensatedJump,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Binary,
        ModelKind::Trinomial,
        ModelKind::TimeChanged,
        ModelKind::ProductNoise,
        ModelKind::CompensatedJump,
    ];

    pub fn id(self) -> &'static str {
        match self {
            ModelKind::Binary => "binary",
            ModelKind::Trinomial => "trinomial",
            ModelKind::TimeChanged => "time_changed",
            ModelKind::ProductNoise => "product_noise",
            ModelKind::CompensatedJump => "compensated_jump",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ModelKind::Binary => "symmetric +-h walk per component; complete one-step markets in d=1",
            ModelKind::Trinomial => "(-h, 0, +h) walk with probabilities (p, 1-2p, p)",
            ModelKind::TimeChanged => "binary walk with state-dependent step h0*sqrt(1+kappa|m|), capped",
            ModelKind::ProductNoise => "walk times an independent fair coin; filtration larger than sigma(M)",
            ModelKind::CompensatedJump => "compensated Poisson jumps plus an optional diffusive coin",
        }
    }
}

/// Kind-specific parameters. Unset values take the documented defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Step size (binary, trinomial, product noise) or base step `h0`
    /// (time changed). Defaults to the unit-diffusion calibration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    /// Trinomial outer-branch probability, default 1/4.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Jump intensity, default 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Jump size, default 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jump_size: Option<f64>,
    /// Volatility of the diffusive coin in the jump model, default 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<f64>,
    /// State dependence of the time-changed step, default 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    /// Cap on the time-changed step, default `4 h0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_cap: Option<f64>,
    /// Walk underlying the product-noise model (binary or trinomial).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<ModelKind>,
    /// Number of outcomes of the independent noise, default 2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fanout: Option<usize>,
    /// Build a recombining lattice when the model allows it, default true.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recombine: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Number of time steps `K`.
    pub steps: usize,
    /// Horizon `T`, default 1.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Martingale dimension, default 1.
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub params: ModelParams,
    /// Node cap, default [`tolerances::NODE_CAP`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_cap: Option<usize>,
}

fn default_horizon() -> f64 {
    1.0
}

fn default_dim() -> usize {
    1
}

impl ModelConfig {
    pub fn new(kind: ModelKind, steps: usize) -> Self {
        Self { kind, steps, horizon: 1.0, dim: 1, params: ModelParams::default(), node_cap: None }
    }

    pub fn with_steps(&self, steps: usize) -> Self {
        Self { steps, ..self.clone() }
    }

    fn cap(&self) -> usize {
        self.node_cap.unwrap_or(tolerances::NODE_CAP)
    }

    fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    fn recombine(&self) -> bool {
        self.params.recombine.unwrap_or(true)
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParameter("model needs at least one step".into()));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.dim == 0 || self.dim > 3 {
            return Err(Error::InvalidParameter(format!("dimension must be 1, 2 or 3, got {}", self.dim)));
        }
        Ok(())
    }

    /// Estimated node count of the model this config builds.
    pub fn estimate_nodes(&self) -> u128 {
        let k = self.steps as u32;
        let full = |b: u128| -> u128 {
            if b == 1 {
                return k as u128 + 1;
            }
            let mut total: u128 = 0;
            let mut level: u128 = 1;
            for _ in 0..=k {
                total = total.saturating_add(level);
                level = level.saturating_mul(b);
            }
            total
        };
        let d = self.dim as u32;
        let lattice = |per_axis: u128| -> u128 {
            (0..=k as u128).map(|j| (per_axis * j + 1).pow(d)).fold(0u128, |a, b| a.saturating_add(b))
        };
        match self.kind {
            ModelKind::Binary if self.recombine() => lattice(1),
            ModelKind::Binary => full(2u128.pow(d)),
            ModelKind::Trinomial if self.recombine() => lattice(2),
            ModelKind::Trinomial => full(3u128.pow(d)),
            ModelKind::TimeChanged => full(2),
            ModelKind::ProductNoise => {
                let base = match self.params.base.unwrap_or(ModelKind::Binary) {
                    ModelKind::Trinomial => 3u128,
                    _ => 2u128,
                };
                full(base.pow(d) * self.params.fanout.unwrap_or(2) as u128)
            }
            ModelKind::CompensatedJump => {
                let kk = k as u128 + 1;
                if self.recombine() {
                    if self.params.diffusion.unwrap_or(1.0) == 0.0 {
                        kk * (kk + 1) / 2
                    } else {
                        kk * (kk + 1) * (2 * kk + 1) / 6
                    }
                } else if self.params.diffusion.unwrap_or(1.0) == 0.0 {
                    full(2)
                } else {
                    full(4)
                }
            }
        }
    }

    fn check_cap(&self) -> Result<()> {
        let estimated = self.estimate_nodes();
        let cap = self.cap();
        if estimated > cap as u128 {
            return Err(Error::NodeCapExceeded { estimated, cap });
        }
        Ok(())
    }
}

/// Record of how a model was built, for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: ModelKind,
    pub steps: usize,
    pub horizon: f64,
    pub dim: usize,
    pub params: ModelParams,
    pub nodes: usize,
    pub edges: usize,
    pub recombining: bool,
}

/// A built model: tree, martingale, optional auxiliary noise and flags.
#[derive(Debug, Clone)]
pub struct Model {
    pub tree: ScenarioTree,
    pub martingale: AdaptedProcess,
    /// Independent noise carried by the filtration (product-noise model).
    pub aux: Option<AdaptedProcess>,
    /// `M` is Markov with respect to the tree filtration.
    pub markov: bool,
    /// The filtration is generated by `M` alone.
    pub natural_filtration: bool,
    pub provenance: Provenance,
}

impl Model {
    fn finish(
        config: &ModelConfig,
        tree: ScenarioTree,
        martingale: AdaptedProcess,
        aux: Option<AdaptedProcess>,
        natural_filtration: bool,
    ) -> Result<Self> {
        let check = is_martingale(&tree, &martingale, tolerances::MARTINGALE);
        if !check.is_martingale {
            return Err(Error::NotMartingale {
                node: check.worst_node.unwrap_or(0),
                violation: check.violation,
            });
        }
        let provenance = Provenance {
            kind: config.kind,
            steps: config.steps,
            horizon: config.horizon,
            dim: config.dim,
            params: config.params.clone(),
            nodes: tree.n_nodes(),
            edges: tree.n_edges(),
            recombining: tree.is_recombining(),
        };
        Ok(Self { tree, martingale, aux, markov: true, natural_filtration, provenance })
    }

    /// Terminal martingale values, `dim` entries per leaf.
    pub fn terminal_states(&self) -> Vec<f64> {
        self.martingale.terminal(&self.tree)
    }
}

/// Dispatch on `config.kind`.
pub fn build(config: &ModelConfig) -> Result<Model> {
    match config.kind {
        ModelKind::Binary => build_binary(config),
        ModelKind::Trinomial => build_trinomial(config),
        ModelKind::TimeChanged => build_time_changed(config),
        ModelKind::ProductNoise => build_product_noise(config),
        ModelKind::CompensatedJump => build_compensated_jump(config),
    }
}

fn require_kind(config: &ModelConfig, kind: ModelKind) -> Result<()> {
    if config.kind != kind {
        return Err(Error::InvalidParameter(format!(
            "expected a {} config, got {}",
            kind.id(),
            config.kind.id()
        )));
    }
    config.validate()
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

/// Per-component one-step law of an additive walk: integer offsets and
/// probabilities.
fn product_steps(per_axis: &[(i32, f64)], dim: usize) -> Vec<(Vec<i32>, f64)> {
    let mut out: Vec<(Vec<i32>, f64)> = vec![(Vec::new(), 1.0)];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|(key, p)| {
                per_axis.iter().map(move |&(o, q)| {
                    let mut k = key.clone();
                    k.push(o);
                    (k, p * q)
                })
            })
            .collect();
    }
    out
}

/// Level-by-level builder. With `merge` set, children with equal keys on a
/// level share one node (a lattice); otherwise every edge gets a fresh node.
#[allow(clippy::too_many_arguments)]
fn grow<S, K, StepFn, KeyFn, ValueFn>(
    grid: TimeGrid,
    dim: usize,
    root: S,
    merge: bool,
    cap: usize,
    mut step: StepFn,
    key: KeyFn,
    mut value: ValueFn,
) -> Result<(ScenarioTree, Vec<f64>, Vec<S>)>
where
    S: Clone,
    K: Hash + Eq,
    StepFn: FnMut(usize, &S) -> Vec<(S, f64)>,
    KeyFn: Fn(&S) -> K,
    ValueFn: FnMut(usize, &S) -> Vec<f64>,
{
    let steps = grid.steps();
    let mut states = vec![root];
    let mut values = value(0, &states[0]);
    let mut level_sizes = vec![1usize];
    let mut edges: Vec<Vec<EdgeSpec>> = Vec::new();
    let mut level_start = 0usize;
    for k in 0..steps {
        let level_end = states.len();
        let mut index: HashMap<K, usize> = HashMap::new();
        for i in level_start..level_end {
            let parent = states[i].clone();
            let mut out = Vec::new();
            for (s, prob) in step(k, &parent) {
                let id = if merge {
                    match index.get(&key(&s)) {
                        Some(&id) => id,
                        None => {
                            let id = states.len();
                            index.insert(key(&s), id);
                            values.extend(value(k + 1, &s));
                            states.push(s);
                            id
                        }
                    }
                } else {
                    let id = states.len();
                    values.extend(value(k + 1, &s));
                    states.push(s);
                    id
                };
                if states.len() > cap {
                    return Err(Error::NodeCapExceeded { estimated: states.len() as u128, cap });
                }
                out.push(EdgeSpec { child: id, prob });
            }
            edges.push(out);
        }
        level_sizes.push(states.len() - level_end);
        level_start = level_end;
    }
    let tree = ScenarioTree::new(grid, dim, &level_sizes, edges)?;
    Ok((tree, values, states))
}

fn additive_walk(config: &ModelConfig, per_axis: &[(i32, f64)], h: f64, natural: bool) -> Result<Model> {
    config.check_cap()?;
    let d = config.dim;
    let grid = TimeGrid::uniform(config.horizon, config.steps)?;
    let moves = product_steps(per_axis, d);
    let (tree, values, _) = grow(
        grid,
        d,
        vec![0i32; d],
        config.recombine(),
        config.cap(),
        |_, s: &Vec<i32>| {
            moves.iter().map(|(o, p)| (s.iter().zip(o).map(|(a, b)| a + b).collect(), *p)).collect()
        },
        |s| s.clone(),
        |_, s| s.iter().map(|&j| j as f64 * h).collect(),
    )?;
    let m = AdaptedProcess::new(&tree, d, values)?;
    Model::finish(config, tree, m, None, natural)
}

fn binary_step(config: &ModelConfig) -> Result<f64> {
    positive("h", config.params.h.unwrap_or_else(|| config.dt().sqrt()))
}

fn trinomial_law(config: &ModelConfig) -> Result<(f64, f64)> {
    let p = config.params.p.unwrap_or(0.25);
    if !(p > 0.0 && p < 0.5) {
        return Err(Error::InvalidParameter(format!("trinomial p must lie in (0, 1/2), got {p}")));
    }
    let h = config.params.h.unwrap_or_else(|| (config.dt() / (2.0 * p)).sqrt());
    Ok((p, positive("h", h)?))
}

/// Symmetric `+-h` walk, independent across components.
pub fn build_binary(config: &ModelConfig) -> Result<Model> {
    require_kind(config, ModelKind::Binary)?;
    let h = binary_step(config)?;
    additive_walk(config, &[(-1, 0.5), (1, 0.5)], h, true)
}

/// `(-h, 0, +h)` walk with probabilities `(p, 1-2p, p)`.
pub fn build_trinomial(config: &ModelConfig) -> Result<Model> {
    require_kind(config, ModelKind::Trinomial)?;
    let (p, h) = trinomial_law(config)?;
    additive_walk(config, &[(-1, p), (0, 1.0 - 2.0 * p), (1, p)], h, true)
}

/// Walk times an independent noise with `fanout` equally likely outcomes.
/// The auxiliary process holds the latest noise outcome, standardized to
/// mean 0 and variance 1 (`+-1` for a coin); it is 0 at the root.
pub fn build_product_noise(config: &ModelConfig) -> Result<Model> {
    require_kind(config, ModelKind::ProductNoise)?;
    let fanout = config.params.fanout.unwrap_or(2);
    if fanout < 2 {
        return Err(Error::InvalidParameter(format!("noise fan-out must be at least 2, got {fanout}")));
    }
    config.check_cap()?;
    let (per_axis, h): (Vec<(i32, f64)>, f64) = match config.params.base.unwrap_or(ModelKind::Binary) {
        ModelKind::Binary => (vec![(-1, 0.5), (1, 0.5)], binary_step(config)?),
        ModelKind::Trinomial => {
            let (p, h) = trinomial_law(config)?;
            (vec![(-1, p), (0, 1.0 - 2.0 * p), (1, p)], h)
        }
        other => {
            return Err(Error::InvalidParameter(format!(
                "product noise base must be binary or trinomial, got {}",
                other.id()
            )))
        }
    };
    let mean = (fanout as f64 - 1.0) / 2.0;
    let sd = ((fanout * fanout - 1) as f64 / 12.0).sqrt();
    let noise: Vec<f64> = (0..fanout).map(|j| (j as f64 - mean) / sd).collect();
    let d = config.dim;
    let moves = product_steps(&per_axis, d);
    let grid = TimeGrid::uniform(config.horizon, config.steps)?;
    let q = 1.0 / fanout as f64;
    let (tree, values, states) = grow(
        grid,
        d,
        (vec![0i32; d], 0.0f64),
        false,
        config.cap(),
        |_, (s, _): &(Vec<i32>, f64)| {
            let mut out = Vec::with_capacity(moves.len() * fanout);
            for (o, p) in &moves {
                let next: Vec<i32> = s.iter().zip(o).map(|(a, b)| a + b).collect();
                for &a in &noise {
                    out.push(((next.clone(), a), p * q));
                }
            }
            out
        },
        |_| (),
        |_, (s, _)| s.iter().map(|&j| j as f64 * h).collect(),
    )?;
    let m = AdaptedProcess::new(&tree, d, values)?;
    let aux = AdaptedProcess::scalar(&tree, states.iter().map(|(_, a)| *a).collect())?;
    Model::finish(config, tree, m, Some(aux), false)
}

/// Per step a jump `J` with `P(J = 1) = lambda dt` and, unless `diffusion`
/// is zero, an independent fair coin. `dM = diffusion * sqrt(dt) * coin +
/// jump_size * (J - lambda dt)`.
pub fn build_compensated_jump(config: &ModelConfig) -> Result<Model> {
    require_kind(config, ModelKind::CompensatedJump)?;
    if config.dim != 1 {
        return Err(Error::InvalidParameter("the compensated jump model is one-dimensional".into()));
    }
    let lambda = positive("lambda", config.params.lambda.unwrap_or(1.0))?;
    let size = positive("jump_size", config.params.jump_size.unwrap_or(1.0))?;
    let sigma = config.params.diffusion.unwrap_or(1.0);
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("diffusion must be non-negative, got {sigma}")));
    }
    let dt = config.dt();
    let pj = lambda * dt;
    if pj >= 1.0 {
        return Err(Error::InvalidParameter(format!("jump probability lambda*dt = {pj} must be below 1")));
    }
    config.check_cap()?;
    let h = sigma * dt.sqrt();
    let coins: Vec<(i32, f64)> = if sigma == 0.0 { vec![(0, 1.0)] } else { vec![(-1, 0.5), (1, 0.5)] };
    let grid = TimeGrid::uniform(config.horizon, config.steps)?;
    let (tree, values, _) = grow(
        grid.clone(),
        1,
        (0i32, 0i32),
        config.recombine(),
        config.cap(),
        |_, &(u, j)| {
            let mut out = Vec::with_capacity(4);
            for &(c, pc) in &coins {
                out.push(((u + c, j), pc * (1.0 - pj)));
                out.push(((u + c, j + 1), pc * pj));
            }
            out
        },
        |s| *s,
        |k, &(u, j)| vec![u as f64 * h + size * (j as f64 - lambda * grid.time(k))],
    )?;
    let m = AdaptedProcess::scalar(&tree, values)?;
    Model::finish(config, tree, m, None, true)
}

/// Binary walk with step `h(m) = h0 * sqrt(1 + kappa |m|)`, capped at
/// `h_cap`. The bracket depends on the state, so the clock is random.
pub fn build_time_changed(config: &ModelConfig) -> Result<Model> {
    require_kind(config, ModelKind::TimeChanged)?;
    if config.dim != 1 {
        return Err(Error::InvalidParameter("the time-changed model is one-dimensional".into()));
    }
    let kappa = config.params.kappa.unwrap_or(1.0);
    if !(kappa.is_finite() && kappa >= 0.0) {
        return Err(Error::InvalidParameter(format!("kappa must be non-negative, got {kappa}")));
    }
    let h0 = binary_step(config)?;
    let cap = positive("h_cap", config.params.h_cap.unwrap_or(4.0 * h0))?;
    if kappa == 0.0 {
        let mut binary = config.clone();
        binary.kind = ModelKind::Binary;
        binary.params.h = Some(h0);
        let mut model = build_binary(&binary)?;
        model.provenance.kind = ModelKind::TimeChanged;
        model.provenance.params = config.params.clone();
        return Ok(model);
    }
    config.check_cap()?;
    let step = |m: f64| (h0 * (1.0 + kappa * m.abs()).sqrt()).min(cap);
    let grid = TimeGrid::uniform(config.horizon, config.steps)?;
    let (tree, values, _) = grow(
        grid,
        1,
        0.0f64,
        false,
        config.cap(),
        |_, &m| {
            let h = step(m);
            vec![(m - h, 0.5), (m + h, 0.5)]
        },
        |_| (),
        |_, &m| vec![m],
    )?;
    let m = AdaptedProcess::scalar(&tree, values)?;
    Model::finish(config, tree, m, None, true)
}
