//! Exact Galtchouk-Kunita-Watanabe decomposition on trees.
//!
//! At each internal node the integrand `Z` solves the conditional normal
//! equations `E[dM dM^T] Z = E[dY dM]` (minimal-norm solution on
//! rank-deficient nodes), and the orthogonal increment on each edge is
//! `dN = dY - Z.dM`. Everything else in this module measures `dN`.

use serde::Serialize;

use crate::ftree::{increment, is_martingale, AdaptedProcess, PredictableField, ScenarioTree};
use crate::models::{self, ModelConfig};
use crate::mollify::StateMap;
use crate::numeric::{compensated_sum, pinv_solve, CompensatedSum, Trend};
use crate::{tolerances, Error, Result};

/// Martingale increments per edge and conditional second moments per node,
/// computed once and shared by every projection against the same `M`.
#[derive(Debug, Clone)]
pub struct Projector {
    dim: usize,
    dm: Vec<f64>,
    second: Vec<f64>,
}

impl Projector {
    pub fn new(tree: &ScenarioTree, m: &AdaptedProcess) -> Result<Self> {
        m.check(tree, "projection martingale")?;
        let d = m.dim();
        let mut dm = vec![0.0; tree.n_edges() * d];
        for e in 0..tree.n_edges() {
            increment(tree, m, e, &mut dm[e * d..(e + 1) * d]);
        }
        let mut second = vec![0.0; tree.n_internal() * d * d];
        for i in 0..tree.n_internal() {
            let s = &mut second[i * d * d..(i + 1) * d * d];
            for a in 0..d {
                for b in 0..=a {
                    let v = compensated_sum(
                        tree.edges(i).map(|e| tree.edge_prob(e) * dm[e * d + a] * dm[e * d + b]),
                    );
                    s[a * d + b] = v;
                    s[b * d + a] = v;
                }
            }
        }
        Ok(Self { dim: d, dm, second })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn dm(&self, edge: usize) -> &[f64] {
        &self.dm[edge * self.dim..(edge + 1) * self.dim]
    }

    /// `E[dM dM^T | node]`, row-major.
    pub fn second_moment(&self, node: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.second[node * dd..(node + 1) * dd]
    }

    /// Least-squares integrand of the edge values `dy(e)` against `dM`.
    pub fn project<F: Fn(usize) -> f64>(&self, tree: &ScenarioTree, node: usize, dy: F) -> Vec<f64> {
        let d = self.dim;
        let rhs: Vec<f64> = (0..d)
            .map(|a| compensated_sum(tree.edges(node).map(|e| tree.edge_prob(e) * dy(e) * self.dm(e)[a])))
            .collect();
        pinv_solve(self.second_moment(node), &rhs, d)
    }

    #[inline]
    pub fn z_dot_dm(&self, z: &[f64], edge: usize) -> f64 {
        z.iter().zip(self.dm(edge)).map(|(a, b)| a * b).sum()
    }
}

/// Worst one-step violations of the defining properties of `dN`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct OrthogonalityReport {
    /// `max |E[dN | node]|`.
    pub mean: f64,
    /// `max_i |E[dN dM^i | node]|`.
    pub covariance: f64,
}

/// Orthogonality diagnostics for per-edge values `dn`.
pub fn orthogonality(tree: &ScenarioTree, proj: &Projector, dn: &[f64]) -> OrthogonalityReport {
    let mut report = OrthogonalityReport::default();
    for i in 0..tree.n_internal() {
        let mean = compensated_sum(tree.edges(i).map(|e| tree.edge_prob(e) * dn[e]));
        report.mean = report.mean.max(mean.abs());
        for a in 0..proj.dim() {
            let c = compensated_sum(tree.edges(i).map(|e| tree.edge_prob(e) * dn[e] * proj.dm(e)[a]));
            report.covariance = report.covariance.max(c.abs());
        }
    }
    report
}

/// Summary statistics of an orthogonal component given per edge.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualStats {
    /// `E[sum_k dN_k^2]`, the expected realized bracket `[N]_T`.
    pub bracket_nn: f64,
    /// `max_node E[sum_{j >= k} dN_j^2 | node]`, a BMO-type size of `N`.
    pub bracket_nn_sup: f64,
    /// `E[dN_k^2]` per step `k`.
    pub level_profile: Vec<f64>,
}

impl ResidualStats {
    pub fn of(tree: &ScenarioTree, dn: &[f64]) -> Self {
        let steps = tree.steps();
        let mut level_profile = vec![0.0; steps];
        let mut remaining = vec![0.0; tree.n_nodes()];
        let mut sup: f64 = 0.0;
        for k in (0..steps).rev() {
            let mut level = CompensatedSum::new();
            for i in tree.level(k) {
                let mut local = CompensatedSum::new();
                let mut rem = CompensatedSum::new();
                for e in tree.edges(i) {
                    let p = tree.edge_prob(e);
                    local.add(p * dn[e] * dn[e]);
                    rem.add(p * remaining[tree.child(e)]);
                }
                let local = local.value();
                remaining[i] = local + rem.value();
                sup = sup.max(remaining[i]);
                level.add(tree.prob(i) * local);
            }
            level_profile[k] = level.value();
        }
        Self {
            bracket_nn: compensated_sum(level_profile.iter().copied()),
            bracket_nn_sup: sup,
            level_profile,
        }
    }
}

/// Result of [`gkw_decompose`].
#[derive(Debug, Clone)]
pub struct GkwResult {
    pub z: PredictableField,
    /// Orthogonal increment per edge.
    pub dn: Vec<f64>,
    /// Running sum of `dN` with `N_0 = 0`; only defined on non-recombining
    /// trees.
    pub n: Option<AdaptedProcess>,
    pub y0: f64,
    /// `E[(Y_K - Y_0)^2]`.
    pub variance: f64,
    pub stats: ResidualStats,
    pub orthogonality: OrthogonalityReport,
}

impl GkwResult {
    pub fn bracket_nn(&self) -> f64 {
        self.stats.bracket_nn
    }

    /// `[N]_T / Var(Y_K)`, or 0 when `Y` is constant.
    pub fn normalized_residual(&self) -> f64 {
        if self.variance > 0.0 {
            self.stats.bracket_nn / self.variance
        } else {
            0.0
        }
    }

    /// Realized `[N]_T` on each leaf (trees only).
    pub fn realized_bracket(&self, tree: &ScenarioTree) -> Result<Vec<f64>> {
        tree.require_tree("realized bracket of N")?;
        let mut acc = vec![0.0; tree.n_nodes()];
        for i in 0..tree.n_internal() {
            for e in tree.edges(i) {
                acc[tree.child(e)] = acc[i] + self.dn[e] * self.dn[e];
            }
        }
        Ok(tree.leaves().map(|i| acc[i]).collect())
    }
}

/// `Y_k = E[zeta | F_k]` by backward averaging.
pub fn martingale_from_terminal(tree: &ScenarioTree, zeta: &[f64]) -> Result<AdaptedProcess> {
    let leaves = tree.leaves();
    if zeta.len() != leaves.len() {
        return Err(Error::DimensionMismatch {
            expected: leaves.len(),
            got: zeta.len(),
            context: "terminal values",
        });
    }
    let mut y = vec![0.0; tree.n_nodes()];
    y[leaves.clone()].copy_from_slice(zeta);
    for i in (0..tree.n_internal()).rev() {
        y[i] = compensated_sum(tree.edges(i).map(|e| tree.edge_prob(e) * y[tree.child(e)]));
    }
    AdaptedProcess::scalar(tree, y)
}

fn decompose_with(tree: &ScenarioTree, proj: &Projector, y: &AdaptedProcess) -> Result<GkwResult> {
    y.check(tree, "gkw input")?;
    if y.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: y.dim(),
            context: "decomposed martingale must be scalar",
        });
    }
    let scale = y.values().iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let check = is_martingale(tree, y, tolerances::GKW_IDENTITY * scale);
    if !check.is_martingale {
        return Err(Error::NotMartingale { node: check.worst_node.unwrap_or(0), violation: check.violation });
    }
    let d = proj.dim();
    let mut z = PredictableField::zeros(tree, d);
    let mut dn = vec![0.0; tree.n_edges()];
    for i in 0..tree.n_internal() {
        let yi = y.value(i);
        let zi = proj.project(tree, i, |e| y.value(tree.child(e)) - yi);
        for e in tree.edges(i) {
            dn[e] = y.value(tree.child(e)) - yi - proj.z_dot_dm(&zi, e);
        }
        z.get_mut(i).copy_from_slice(&zi);
    }
    let n = if tree.is_recombining() {
        None
    } else {
        let mut vals = vec![0.0; tree.n_nodes()];
        for i in 0..tree.n_internal() {
            for e in tree.edges(i) {
                vals[tree.child(e)] = vals[i] + dn[e];
            }
        }
        Some(AdaptedProcess::scalar(tree, vals)?)
    };
    let y0 = y.value(0);
    let variance = compensated_sum(tree.leaves().map(|i| tree.prob(i) * (y.value(i) - y0).powi(2)));
    Ok(GkwResult {
        stats: ResidualStats::of(tree, &dn),
        orthogonality: orthogonality(tree, proj, &dn),
        z,
        dn,
        n,
        y0,
        variance,
    })
}

/// Decompose the martingale `Y` against `M`.
pub fn gkw_decompose(tree: &ScenarioTree, m: &AdaptedProcess, y: &AdaptedProcess) -> Result<GkwResult> {
    let proj = Projector::new(tree, m)?;
    decompose_with(tree, &proj, y)
}

/// Evaluate `f` at the terminal values of `states`.
pub fn terminal_values(tree: &ScenarioTree, states: &AdaptedProcess, f: &dyn StateMap) -> Result<Vec<f64>> {
    if f.arity() != states.dim() {
        return Err(Error::DimensionMismatch {
            expected: states.dim(),
            got: f.arity(),
            context: "terminal map arity",
        });
    }
    Ok(tree.leaves().map(|i| f.eval(states.get(i))).collect())
}

/// One row of a refinement sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub steps: usize,
    pub nodes: usize,
    pub bracket_nn: f64,
    pub normalized: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub trend: Trend,
}

impl SweepTable {
    pub fn from_rows(mut rows: Vec<SweepRow>) -> Self {
        rows.sort_by_key(|r| r.steps);
        let xs: Vec<f64> = rows.iter().map(|r| r.steps as f64).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.bracket_nn).collect();
        Self { trend: Trend::of(&xs, &ys), rows }
    }
}

/// GKW residual of `f(M_K)` for each step count in `steps`.
pub fn residual_sweep(config: &ModelConfig, f: &dyn StateMap, steps: &[usize]) -> Result<SweepTable> {
    let rows = steps.iter().map(|&k| residual_point(&config.with_steps(k), f)).collect::<Result<Vec<_>>>()?;
    Ok(SweepTable::from_rows(rows))
}

/// GKW residual of `f(M_K)` on a single model.
pub fn residual_point(config: &ModelConfig, f: &dyn StateMap) -> Result<SweepRow> {
    let model = models::build(config)?;
    let zeta = terminal_values(&model.tree, &model.martingale, f)?;
    let y = martingale_from_terminal(&model.tree, &zeta)?;
    let g = gkw_decompose(&model.tree, &model.martingale, &y)?;
    Ok(SweepRow {
        steps: config.steps,
        nodes: model.tree.n_nodes(),
        bracket_nn: g.bracket_nn(),
        normalized: g.normalized_residual(),
        variance: g.variance,
    })
}

/// Largest within-group spread of `values` when the nodes of each level
/// are grouped by `keys` (values closer than `tol` in every coordinate fall
/// into one group).
pub fn group_spread(tree: &ScenarioTree, keys: &[&AdaptedProcess], values: &AdaptedProcess, tol: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..=tree.steps() {
        let mut rows: Vec<(Vec<f64>, f64)> = tree
            .level(k)
            .map(|i| {
                let key = keys.iter().flat_map(|p| p.get(i).iter().copied()).collect();
                (key, values.value(i))
            })
            .collect();
        rows.sort_by(|a, b| {
            a.0.iter()
                .zip(&b.0)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut start = 0;
        while start < rows.len() {
            let mut end = start + 1;
            let (mut lo, mut hi) = (rows[start].1, rows[start].1);
            while end < rows.len()
                && rows[end].0.iter().zip(&rows[start].0).all(|(a, b)| (a - b).abs() <= tol)
            {
                lo = lo.min(rows[end].1);
                hi = hi.max(rows[end].1);
                end += 1;
            }
            worst = worst.max(hi - lo);
            start = end;
        }
    }
    worst
}

/// `u(t_k, m)` given on each level by the values of a Markov martingale
/// `Y = u(t, M)`, interpolated linearly in `m` (one-dimensional `M`).
#[derive(Debug, Clone)]
pub struct StateFunction {
    levels: Vec<Vec<(f64, f64)>>,
}

impl StateFunction {
    pub fn from_markov(
        tree: &ScenarioTree,
        m: &AdaptedProcess,
        y: &AdaptedProcess,
        tol: f64,
    ) -> Result<Self> {
        if m.dim() != 1 {
            return Err(Error::Unsupported("state functions are implemented for one-dimensional M".into()));
        }
        let spread = group_spread(tree, &[m], y, tolerances::GROUPING);
        if spread > tol {
            return Err(Error::NotMarkov { spread });
        }
        let levels = (0..=tree.steps())
            .map(|k| {
                let mut pts: Vec<(f64, f64)> = tree.level(k).map(|i| (m.value(i), y.value(i))).collect();
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                pts.dedup_by(|b, a| (a.0 - b.0).abs() <= tolerances::GROUPING);
                pts
            })
            .collect();
        Ok(Self { levels })
    }

    pub fn eval(&self, level: usize, m: f64) -> f64 {
        let pts = &self.levels[level];
        if pts.len() == 1 {
            return pts[0].1;
        }
        let j = pts.partition_point(|p| p.0 < m);
        let (a, b) = if j == 0 {
            (pts[0], pts[1])
        } else if j >= pts.len() {
            (pts[pts.len() - 2], pts[pts.len() - 1])
        } else {
            if pts[j].0 == m {
                return pts[j].1;
            }
            (pts[j - 1], pts[j])
        };
        a.1 + (b.1 - a.1) * (m - a.0) / (b.0 - a.0)
    }
}

/// The two discrete sums of the bracket `[Y, N]` split along the time and
/// space increments of `u`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BracketSplit {
    /// `E[A1_k]`, `k = 0..=K`, with `A1_k = sum_{j<k} (u(t_{j+1}, M_j) - u(t_j, M_j)) dN_j`.
    pub a1_mean: Vec<f64>,
    /// `E[A2_k]` with `A2_k = sum_{j<k} (u(t_{j+1}, M_{j+1}) - u(t_{j+1}, M_j)) dN_j`.
    pub a2_mean: Vec<f64>,
    /// `E|A1_k|` (trees only).
    pub a1_abs: Option<Vec<f64>>,
    /// `E|A2_k|` (trees only).
    pub a2_abs: Option<Vec<f64>>,
    /// `max_edge |a1 + a2 - dY dN|`.
    pub identity_error: f64,
}

/// Split `[Y, N]` into its time and space parts using the state function `u`.
pub fn bracket_split(
    tree: &ScenarioTree,
    m: &AdaptedProcess,
    y: &AdaptedProcess,
    gkw: &GkwResult,
    u: &StateFunction,
) -> Result<BracketSplit> {
    let steps = tree.steps();
    let ne = tree.n_edges();
    let mut a1 = vec![0.0; ne];
    let mut a2 = vec![0.0; ne];
    let mut identity_error: f64 = 0.0;
    for i in 0..tree.n_internal() {
        let k = tree.node_level(i);
        let mi = m.value(i);
        let shifted = u.eval(k + 1, mi);
        for e in tree.edges(i) {
            let c = tree.child(e);
            a1[e] = (shifted - u.eval(k, mi)) * gkw.dn[e];
            a2[e] = (u.eval(k + 1, m.value(c)) - shifted) * gkw.dn[e];
            let realized = (y.value(c) - y.value(i)) * gkw.dn[e];
            identity_error = identity_error.max((a1[e] + a2[e] - realized).abs());
        }
    }
    let cumulative_mean = |part: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; steps + 1];
        for k in 0..steps {
            let level = compensated_sum(
                tree.level(k)
                    .flat_map(|i| tree.edges(i).map(move |e| (i, e)))
                    .map(|(i, e)| tree.prob(i) * tree.edge_prob(e) * part[e]),
            );
            out[k + 1] = out[k] + level;
        }
        out
    };
    let cumulative_abs = |part: &[f64]| -> Vec<f64> {
        let mut acc = vec![0.0; tree.n_nodes()];
        for i in 0..tree.n_internal() {
            for e in tree.edges(i) {
                acc[tree.child(e)] = acc[i] + part[e];
            }
        }
        (0..=steps).map(|k| compensated_sum(tree.level(k).map(|i| tree.prob(i) * acc[i].abs()))).collect()
    };
    let (a1_abs, a2_abs) = if tree.is_recombining() {
        (None, None)
    } else {
        (Some(cumulative_abs(&a1)), Some(cumulative_abs(&a2)))
    };
    Ok(BracketSplit {
        a1_mean: cumulative_mean(&a1),
        a2_mean: cumulative_mean(&a2),
        a1_abs,
        a2_abs,
        identity_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build, ModelKind};
    use crate::mollify::MapSpec;
    use proptest::prelude::*;

    fn trinomial(steps: usize, h: Option<f64>, recombine: bool) -> models::Model {
        let mut c = ModelConfig::new(ModelKind::Trinomial, steps);
        c.params.h = h;
        c.params.recombine = Some(recombine);
        build(&c).unwrap()
    }

    #[test]
    fn one_step_trinomial_square() {
        let model = trinomial(1, Some(1.0), false);
        let sq = MapSpec::Square.build(1).unwrap();
        let zeta = terminal_values(&model.tree, &model.martingale, &sq).unwrap();
        let y = martingale_from_terminal(&model.tree, &zeta).unwrap();
        assert_eq!(y.value(0), 0.5);
        let g = gkw_decompose(&model.tree, &model.martingale, &y).unwrap();
        assert_eq!(g.z.value(0), 0.0);
        assert_eq!(g.dn, vec![0.5, -0.5, 0.5]);
        assert_eq!(g.bracket_nn(), 0.25);
        assert_eq!(g.n.as_ref().unwrap().values(), &[0.0, 0.5, -0.5, 0.5]);

        let u = StateFunction::from_markov(&model.tree, &model.martingale, &y, 1e-12).unwrap();
        let split = bracket_split(&model.tree, &model.martingale, &y, &g, &u).unwrap();
        assert!((split.a1_mean[1] + split.a2_mean[1] - 0.25).abs() < 1e-15);
        assert!(split.identity_error < 1e-15);
    }

    #[test]
    fn binary_leaf_indicator() {
        let mut c = ModelConfig::new(ModelKind::Binary, 2);
        c.params.h = Some(1.0);
        let model = build(&c).unwrap();
        let f = MapSpec::indicator().build(1).unwrap();
        let zeta = terminal_values(&model.tree, &model.martingale, &f).unwrap();
        let y = martingale_from_terminal(&model.tree, &zeta).unwrap();
        assert_eq!(y.value(0), 0.25);
        let g = gkw_decompose(&model.tree, &model.martingale, &y).unwrap();
        assert!(g.bracket_nn() < 1e-30);
        assert!(g.n.is_none());
    }

    #[test]
    fn terminal_martingale_recovers_m() {
        let model = trinomial(4, None, true);
        let zeta = model.martingale.terminal(&model.tree);
        let y = martingale_from_terminal(&model.tree, &zeta).unwrap();
        for (a, b) in y.values().iter().zip(model.martingale.values()) {
            assert!((a - b).abs() < 1e-15);
        }
        let g = gkw_decompose(&model.tree, &model.martingale, &y).unwrap();
        assert!(g.bracket_nn() < 1e-28);
        assert!(martingale_from_terminal(&model.tree, &zeta[1..]).is_err());
    }

    #[test]
    fn rejects_non_martingale_input() {
        let model = trinomial(2, None, true);
        let t = AdaptedProcess::from_fn(&model.tree, 1, |i| vec![model.tree.time_of(i)]).unwrap();
        assert!(matches!(
            gkw_decompose(&model.tree, &model.martingale, &t),
            Err(Error::NotMartingale { .. })
        ));
    }

    #[test]
    fn realized_bracket_averages_to_expected() {
        let model = trinomial(5, None, false);
        let f = MapSpec::indicator().build(1).unwrap();
        let zeta = terminal_values(&model.tree, &model.martingale, &f).unwrap();
        let y = martingale_from_terminal(&model.tree, &zeta).unwrap();
        let g = gkw_decompose(&model.tree, &model.martingale, &y).unwrap();
        let realized = g.realized_bracket(&model.tree).unwrap();
        let mean = compensated_sum(model.tree.leaves().zip(&realized).map(|(i, r)| model.tree.prob(i) * r));
        assert!((mean - g.bracket_nn()).abs() < 1e-14);
        assert!(g.stats.bracket_nn_sup >= g.bracket_nn());
    }

    #[test]
    fn group_spread_detects_dependence_on_hidden_noise() {
        let model = trinomial(3, None, false);
        let spread = group_spread(&model.tree, &[&model.martingale], &model.martingale, 1e-9);
        assert_eq!(spread, 0.0);
        let t = AdaptedProcess::from_fn(&model.tree, 1, |i| vec![i as f64]).unwrap();
        assert!(group_spread(&model.tree, &[&model.martingale], &t, 1e-9) > 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn decomposition_invariants(
            coeffs in proptest::collection::vec(-2.0f64..2.0, 1..5),
            steps in 1usize..6,
            p in 0.05f64..0.45,
            scale in -3.0f64..3.0,
        ) {
            let mut c = ModelConfig::new(ModelKind::Trinomial, steps);
            c.params.p = Some(p);
            let model = build(&c).unwrap();
            let f = MapSpec::CustomPolynomial { coeffs }.build(1).unwrap();
            let zeta = terminal_values(&model.tree, &model.martingale, &f).unwrap();
            let y = martingale_from_terminal(&model.tree, &zeta).unwrap();
            let g = gkw_decompose(&model.tree, &model.martingale, &y).unwrap();
            let tol = 1e-11 * (1.0 + g.variance);
            prop_assert!(g.orthogonality.mean < tol);
            prop_assert!(g.orthogonality.covariance < tol);

            // Pythagoras: E[(Y_K - Y_0)^2] = E[sum (Z dM)^2] + E[[N]_T]
            let proj = Projector::new(&model.tree, &model.martingale).unwrap();
            let mut hedge = CompensatedSum::new();
            for i in 0..model.tree.n_internal() {
                for e in model.tree.edges(i) {
                    let v = proj.z_dot_dm(g.z.get(i), e);
                    hedge.add(model.tree.prob(i) * model.tree.edge_prob(e) * v * v);
                }
            }
            prop_assert!((g.variance - hedge.value() - g.bracket_nn()).abs() < 1e-10 * (1.0 + g.variance));

            let ys = y.scale(scale);
            let gs = gkw_decompose(&model.tree, &model.martingale, &ys).unwrap();
            for (a, b) in gs.dn.iter().zip(&g.dn) {
                prop_assert!((a - scale * b).abs() < 1e-12 * (1.0 + b.abs()));
            }
        }
    }
}
