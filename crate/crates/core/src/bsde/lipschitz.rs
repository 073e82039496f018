//! The backward scheme for Lipschitz drivers.
//!
//! On each internal node, with `E` the one-step conditional expectation,
//!
//! ```text
//! Z_k = GKW integrand of Y_{k+1} against dM,    z_k = Z_k q_k^T,
//! Y_k = E[Y_{k+1}] + f(t_k, X_k, M_k, Y_k, z_k) dC_k,
//! ```
//!
//! implicit in `y` (solved by fixed-point iteration) and explicit in `z`.
//! The orthogonal increment is `dN = Y_{k+1} - E[Y_{k+1}] - Z_k dM`.

use serde::Serialize;

use super::driver::{DriverSpec, Growth};
use crate::ftree::{AdaptedProcess, ClockAndFactor, PredictableField, ScenarioTree};
use crate::gkw::{orthogonality, OrthogonalityReport, Projector, ResidualStats};
use crate::numeric::{compensated_sum, CompensatedSum};
use crate::{tolerances, Error, Result};

/// Everything the backward scheme needs besides the terminal value and
/// the driver: the tree, the martingale, its clock and factor, and the
/// forward state passed to the driver.
#[derive(Debug, Clone)]
pub struct BsdeContext<'a> {
    pub tree: &'a ScenarioTree,
    pub m: &'a AdaptedProcess,
    pub clock: &'a ClockAndFactor,
    pub x: Option<&'a AdaptedProcess>,
    projector: Projector,
}

impl<'a> BsdeContext<'a> {
    pub fn new(
        tree: &'a ScenarioTree,
        m: &'a AdaptedProcess,
        clock: &'a ClockAndFactor,
        x: Option<&'a AdaptedProcess>,
    ) -> Result<Self> {
        if let Some(x) = x {
            x.check(tree, "forward state")?;
        }
        if clock.dc.values().len() != tree.n_internal() {
            return Err(Error::DimensionMismatch {
                expected: tree.n_internal(),
                got: clock.dc.values().len(),
                context: "clock increments",
            });
        }
        let projector = Projector::new(tree, m)?;
        Ok(Self { tree, m, clock, x, projector })
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    /// Forward state at `node`, empty when there is none.
    pub fn state(&self, node: usize) -> &[f64] {
        self.x.map(|x| x.get(node)).unwrap_or(&[])
    }

    /// Largest terminal clock value `C_K`.
    pub fn horizon_clock(&self) -> f64 {
        self.clock.terminal_max(self.tree)
    }

    pub(crate) fn check_terminal(&self, zeta: &[f64]) -> Result<()> {
        let leaves = self.tree.leaves().len();
        if zeta.len() != leaves {
            return Err(Error::DimensionMismatch {
                expected: leaves,
                got: zeta.len(),
                context: "terminal values",
            });
        }
        if let Some(i) = zeta.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("terminal value {i} is not finite")));
        }
        Ok(())
    }
}

/// Diagnostics recorded by every backward solve.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    /// `max |Y|` over all nodes.
    pub y_sup: f64,
    /// `histogram[j]` = number of nodes whose fixed point took `j` iterations.
    pub iterations: Vec<usize>,
    /// `max |Y_k - E[Y_{k+1}] - f(Y_k, z_k) dC_k|`.
    pub backward_residual: f64,
    pub orthogonality: OrthogonalityReport,
    pub residual: ResidualStats,
    /// Per level, `max_node E[sum_{j >= k} |z_j|^2 dC_j + dN_j^2 | node]`.
    pub cond_var_profile: Vec<f64>,
    /// Per level, the largest ratio of the conditional energy above to
    /// the exponential-transform reference
    /// `2 E[psi(zeta + c) + sum psi'(Y + c)(b|Y| + a) dC | node]`, with
    /// `psi(x) = (exp(gamma x) - 1 - gamma x) / gamma^2` and `c = max|Y|`.
    pub psi_ratio_profile: Vec<f64>,
}

impl Diagnostics {
    pub fn max_iterations(&self) -> usize {
        self.iterations.iter().rposition(|&c| c > 0).unwrap_or(0)
    }

    pub fn psi_ratio(&self) -> f64 {
        self.psi_ratio_profile.iter().copied().fold(0.0, f64::max)
    }
}

/// Output of a backward solve.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub y: AdaptedProcess,
    /// The integrand `Z` against `dM`, per internal node.
    pub z: PredictableField,
    /// The driver argument `z = Z q^T`, per internal node.
    pub zq: PredictableField,
    /// `dN` per edge.
    pub dn: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl BsdeSolution {
    pub fn y0(&self) -> f64 {
        self.y.value(0)
    }

    pub fn bracket_nn(&self) -> f64 {
        self.diagnostics.residual.bracket_nn
    }

    /// `max |Y - other.Y|` over all nodes.
    pub fn sup_distance(&self, other: &BsdeSolution) -> f64 {
        self.y.values().iter().zip(other.y.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// `y = base + f(y) dc`, iterated from `y = base`.
pub(crate) fn fixed_point<F: Fn(f64) -> f64>(base: f64, dc: f64, f: F, node: usize) -> Result<(f64, usize)> {
    let mut y = base;
    for iter in 1..=tolerances::FIXED_POINT_MAX_ITERS {
        let next = base + f(y) * dc;
        if !next.is_finite() {
            return Err(Error::FixedPointNonConvergent { node, iters: iter });
        }
        let done = (next - y).abs() <= tolerances::FIXED_POINT * y.abs().max(1.0);
        y = next;
        if done {
            return Ok((y, iter));
        }
    }
    Err(Error::FixedPointNonConvergent { node, iters: tolerances::FIXED_POINT_MAX_ITERS })
}

/// Solves the scheme for a Lipschitz driver. Requires
/// `L_y max dC < 1`, which makes each implicit step a contraction.
pub fn solve_lipschitz(ctx: &BsdeContext<'_>, zeta: &[f64], f: &DriverSpec) -> Result<BsdeSolution> {
    if !f.is_lipschitz() {
        return Err(Error::NotLipschitz(format!(
            "{} has Lipschitz constants ({}, {})",
            f.id(),
            f.lipschitz_y(),
            f.lipschitz_z()
        )));
    }
    let max_dc = ctx.clock.max_dc();
    if f.lipschitz_y() * max_dc >= 1.0 {
        return Err(Error::ContractionViolated { lipschitz: f.lipschitz_y(), max_dc });
    }
    backward(ctx, zeta, f)
}

pub(crate) fn backward(ctx: &BsdeContext<'_>, zeta: &[f64], f: &DriverSpec) -> Result<BsdeSolution> {
    ctx.check_terminal(zeta)?;
    let tree = ctx.tree;
    let proj = &ctx.projector;
    let d = proj.dim();
    let mut y = vec![0.0; tree.n_nodes()];
    y[tree.leaves()].copy_from_slice(zeta);
    let mut zs = vec![0.0; tree.n_internal() * d];
    let mut zqs = vec![0.0; tree.n_internal() * d];
    let mut dn = vec![0.0; tree.n_edges()];
    let mut histogram = vec![0usize; tolerances::FIXED_POINT_MAX_ITERS + 1];
    let mut residual: f64 = 0.0;
    for k in (0..tree.steps()).rev() {
        let t = tree.grid().time(k);
        for i in tree.level(k) {
            let ey = compensated_sum(tree.edges(i).map(|e| tree.edge_prob(e) * y[tree.child(e)]));
            let z = proj.project(tree, i, |e| y[tree.child(e)] - ey);
            let zq = ctx.clock.z_argument(i, &z);
            let dc = ctx.clock.dc.value(i);
            let (x, m) = (ctx.state(i), ctx.m.get(i));
            let drive = |v: f64| f.eval(t, x, m, v, &zq);
            let (yi, iters) = fixed_point(ey, dc, drive, i)?;
            histogram[iters] += 1;
            residual = residual.max((yi - ey - drive(yi) * dc).abs());
            y[i] = yi;
            for e in tree.edges(i) {
                dn[e] = y[tree.child(e)] - ey - proj.z_dot_dm(&z, e);
            }
            zs[i * d..(i + 1) * d].copy_from_slice(&z);
            zqs[i * d..(i + 1) * d].copy_from_slice(&zq);
        }
    }
    let y = AdaptedProcess::scalar(tree, y)?;
    let z = PredictableField::new(tree, d, zs)?;
    let zq = PredictableField::new(tree, d, zqs)?;
    let diagnostics = diagnose(ctx, &y, &zq, &dn, f.growth(), histogram, residual);
    Ok(BsdeSolution { y, z, zq, dn, diagnostics })
}

fn diagnose(
    ctx: &BsdeContext<'_>,
    y: &AdaptedProcess,
    zq: &PredictableField,
    dn: &[f64],
    growth: Growth,
    mut iterations: Vec<usize>,
    backward_residual: f64,
) -> Diagnostics {
    let tree = ctx.tree;
    let y_sup = y.values().iter().map(|v| v.abs()).fold(0.0, f64::max);
    let last = iterations.iter().rposition(|&c| c > 0).unwrap_or(0);
    iterations.truncate(last + 1);

    let gamma = growth.gamma;
    let psi = |v: f64| {
        if gamma == 0.0 {
            0.5 * v * v
        } else {
            ((gamma * v).exp() - 1.0 - gamma * v) / (gamma * gamma)
        }
    };
    let dpsi = |v: f64| if gamma == 0.0 { v } else { ((gamma * v).exp() - 1.0) / gamma };

    let steps = tree.steps();
    let mut energy = vec![0.0; tree.n_nodes()];
    let mut reference = vec![0.0; tree.n_nodes()];
    for i in tree.leaves() {
        reference[i] = psi(y.value(i) + y_sup);
    }
    let mut cond_var_profile = vec![0.0f64; steps];
    let mut psi_ratio_profile = vec![0.0f64; steps];
    for k in (0..steps).rev() {
        for i in tree.level(k) {
            let dc = ctx.clock.dc.value(i);
            let z2: f64 = zq.get(i).iter().map(|v| v * v).sum();
            let mut e_sum = CompensatedSum::new();
            let mut r_sum = CompensatedSum::new();
            for e in tree.edges(i) {
                let p = tree.edge_prob(e);
                let c = tree.child(e);
                e_sum.add(p * (dn[e] * dn[e] + energy[c]));
                r_sum.add(p * reference[c]);
            }
            let yi = y.value(i);
            energy[i] = z2 * dc + e_sum.value();
            reference[i] = r_sum.value() + dpsi(yi + y_sup) * (growth.b * yi.abs() + growth.a) * dc;
            cond_var_profile[k] = cond_var_profile[k].max(energy[i]);
            let bound = 2.0 * reference[i];
            let ratio = if bound > 0.0 {
                energy[i] / bound
            } else if energy[i] > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            psi_ratio_profile[k] = psi_ratio_profile[k].max(ratio);
        }
    }
    Diagnostics {
        y_sup,
        iterations,
        backward_residual,
        orthogonality: orthogonality(tree, &ctx.projector, dn),
        residual: ResidualStats::of(tree, dn),
        cond_var_profile,
        psi_ratio_profile,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::driver::DriverConfig;
    use crate::ftree::predictable_bracket;
    use crate::models::{build, ModelConfig, ModelKind};

    fn binary(steps: usize) -> crate::models::Model {
        build(&ModelConfig::new(ModelKind::Binary, steps)).unwrap()
    }

    #[test]
    fn zero_driver_gives_the_martingale() {
        let model = binary(6);
        let clock = predictable_bracket(&model.tree, &model.martingale).unwrap();
        let ctx = BsdeContext::new(&model.tree, &model.martingale, &clock, None).unwrap();
        let zeta: Vec<f64> = model.martingale.terminal(&model.tree).iter().map(|m| m * m).collect();
        let sol = solve_lipschitz(&ctx, &zeta, &DriverConfig::Zero.build().unwrap()).unwrap();
        // E[M_T^2] = T on the binary walk
        assert!((sol.y0() - 1.0).abs() < 1e-13);
        // M^2 = M_0^2 + 2 M dM + dM^2, and dM^2 = h^2 is deterministic: N = 0
        assert!(sol.bracket_nn() < 1e-24);
        assert!(sol.diagnostics.backward_residual < 1e-14);
        assert_eq!(sol.diagnostics.max_iterations(), 1);
    }

    #[test]
    fn linear_driver_discounts_by_the_clock() {
        let model = binary(32);
        let clock = predictable_bracket(&model.tree, &model.martingale).unwrap();
        let ctx = BsdeContext::new(&model.tree, &model.martingale, &clock, None).unwrap();
        let zeta = vec![1.0; model.tree.leaves().len()];
        let b = 0.8;
        let sol = solve_lipschitz(&ctx, &zeta, &DriverConfig::LinearY { b }.build().unwrap()).unwrap();
        // deterministic clock: Y_0 = prod_k (1 + b dC_k)^{-1}
        let oracle: f64 = (0..32)
            .map(|k| {
                let i = model.tree.level(k).start;
                1.0 / (1.0 + b * clock.dc.value(i))
            })
            .product();
        assert!((sol.y0() - oracle).abs() < 1e-12);
        let c_t = clock.terminal_max(&model.tree);
        assert!((sol.y0() - (-b * c_t).exp()).abs() < 5e-3);
        assert!(sol.diagnostics.max_iterations() > 1);
    }

    #[test]
    fn contraction_is_enforced() {
        let model = binary(2);
        let clock = predictable_bracket(&model.tree, &model.martingale).unwrap();
        let ctx = BsdeContext::new(&model.tree, &model.martingale, &clock, None).unwrap();
        let zeta = vec![1.0; 3];
        let steep = DriverConfig::LinearY { b: 10.0 }.build().unwrap();
        assert!(matches!(solve_lipschitz(&ctx, &zeta, &steep), Err(Error::ContractionViolated { .. })));
        let quad = DriverConfig::PureQuadratic { gamma: 1.0 }.build().unwrap();
        assert!(matches!(solve_lipschitz(&ctx, &zeta, &quad), Err(Error::NotLipschitz(_))));
        assert!(matches!(
            solve_lipschitz(&ctx, &[1.0], &DriverConfig::Zero.build().unwrap()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn scheme_is_consistent_with_its_definition() {
        let model = build(&ModelConfig::new(ModelKind::Trinomial, 8)).unwrap();
        let clock = predictable_bracket(&model.tree, &model.martingale).unwrap();
        let ctx = BsdeContext::new(&model.tree, &model.martingale, &clock, None).unwrap();
        let zeta: Vec<f64> = model.martingale.terminal(&model.tree).iter().map(|m| m.sin()).collect();
        let f = DriverConfig::Truncated { gamma: 1.0, b: 0.5, eta: 0.1, p: 1.0 }.build().unwrap();
        let sol = solve_lipschitz(&ctx, &zeta, &f).unwrap();
        assert!(sol.diagnostics.backward_residual < 1e-10);
        assert!(sol.diagnostics.orthogonality.mean < 1e-12);
        assert!(sol.diagnostics.orthogonality.covariance < 1e-12);
        // the trinomial step has three outcomes, so sin(M_T) leaves a residual
        assert!(sol.bracket_nn() > 0.0);
        // independent recomputation of one node
        let tree = &model.tree;
        let i = tree.level(7).start + 3;
        let ey: f64 = tree.edges(i).map(|e| tree.edge_prob(e) * sol.y.value(tree.child(e))).sum();
        let zq = sol.zq.value(i);
        let dc = clock.dc.value(i);
        let rhs =
            ey + (0.5 * sol.y.value(i).abs() + 0.1 + super::super::driver::huber(1.0, 1.0, zq.abs())) * dc;
        assert!((sol.y.value(i) - rhs).abs() < 1e-12);
    }
}
