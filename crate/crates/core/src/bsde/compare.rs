//! Comparison of two solutions on the same tree.
//!
//! If `zeta1 >= zeta2` and `f1 >= f2` along the second solution, the first
//! solution dominates the second everywhere. On a tree this holds for the
//! backward scheme as long as every step is monotone, which the Lipschitz
//! constants guarantee when `1 - L_z |q^{-1} dM| >= 0` on every edge.

use serde::Serialize;

use super::driver::DriverSpec;
use super::lipschitz::{BsdeContext, BsdeSolution};
use crate::numeric::pinv_solve;
use crate::tolerances;

/// One side of a comparison: terminal value, driver and computed solution.
#[derive(Debug, Clone, Copy)]
pub struct ComparisonSide<'a> {
    pub zeta: &'a [f64],
    pub driver: &'a DriverSpec,
    pub solution: &'a BsdeSolution,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum ComparisonVerdict {
    /// Preconditions hold and `Y1 >= Y2` up to the tolerance.
    Holds { worst: f64 },
    /// Preconditions hold but `Y2 - Y1` exceeds the tolerance at `node`.
    Violated { worst: f64, node: usize },
    /// A precondition fails; nothing is asserted.
    NotApplicable { reason: String },
}

impl ComparisonVerdict {
    pub fn is_violation(&self) -> bool {
        matches!(self, ComparisonVerdict::Violated { .. })
    }
}

/// Largest `L_z |q^{-1} dM|`-type coefficient over all edges; the scheme is
/// monotone when it is at most one.
pub fn monotonicity_margin(ctx: &BsdeContext<'_>, lipschitz_z: f64) -> f64 {
    let tree = ctx.tree;
    let proj = ctx.projector();
    let d = proj.dim();
    let mut worst: f64 = 0.0;
    for i in 0..tree.n_internal() {
        let dc = ctx.clock.dc.value(i);
        if dc == 0.0 {
            continue;
        }
        let sigma = ctx.clock.sigma.get(i);
        let q = ctx.clock.q.get(i);
        for e in tree.edges(i) {
            // the edge sensitivity of z = Z q^T is dC q Sigma^+ dM
            let s = pinv_solve(sigma, proj.dm(e), d);
            let v: f64 = (0..d)
                .map(|a| {
                    let col: f64 = (0..d).map(|b| q[a * d + b] * s[b]).sum();
                    (dc * col).powi(2)
                })
                .sum::<f64>()
                .sqrt();
            worst = worst.max(lipschitz_z * v);
        }
    }
    worst
}

/// Checks the preconditions and, when they hold, whether the first
/// solution dominates the second.
pub fn compare(
    ctx: &BsdeContext<'_>,
    first: ComparisonSide<'_>,
    second: ComparisonSide<'_>,
) -> ComparisonVerdict {
    let tree = ctx.tree;
    let tol = tolerances::COMPARISON;
    if first.zeta.len() != second.zeta.len() {
        return ComparisonVerdict::NotApplicable { reason: "terminal values have different lengths".into() };
    }
    if let Some((j, (a, b))) =
        first.zeta.iter().zip(second.zeta).enumerate().find(|(_, (a, b))| **a < **b - tol)
    {
        return ComparisonVerdict::NotApplicable {
            reason: format!("terminal order fails at leaf {j}: {a} < {b}"),
        };
    }
    let sol2 = second.solution;
    for k in 0..tree.steps() {
        let t = tree.grid().time(k);
        for i in tree.level(k) {
            let (x, m, y, z) = (ctx.state(i), ctx.m.get(i), sol2.y.value(i), sol2.zq.get(i));
            let (f1, f2) = (first.driver.eval(t, x, m, y, z), second.driver.eval(t, x, m, y, z));
            if f1 < f2 - tol {
                return ComparisonVerdict::NotApplicable {
                    reason: format!("driver order fails at node {i}: {f1} < {f2}"),
                };
            }
        }
    }
    let margin = monotonicity_margin(ctx, first.driver.lipschitz_z());
    if margin > 1.0 {
        return ComparisonVerdict::NotApplicable {
            reason: format!("scheme is not monotone: edge coefficient {margin} > 1"),
        };
    }
    let (mut worst, mut node) = (f64::NEG_INFINITY, 0);
    for (i, (y1, y2)) in first.solution.y.values().iter().zip(sol2.y.values()).enumerate() {
        if y2 - y1 > worst {
            worst = y2 - y1;
            node = i;
        }
    }
    if worst > tol {
        ComparisonVerdict::Violated { worst, node }
    } else {
        ComparisonVerdict::Holds { worst }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::driver::{DriverConfig, Growth};
    use crate::bsde::lipschitz::solve_lipschitz;
    use crate::ftree::predictable_bracket;
    use crate::models::{build, ModelConfig, ModelKind};

    #[test]
    fn ordered_data_give_ordered_solutions() {
        let model = build(&ModelConfig::new(ModelKind::Trinomial, 10)).unwrap();
        let clock = predictable_bracket(&model.tree, &model.martingale).unwrap();
        let ctx = BsdeContext::new(&model.tree, &model.martingale, &clock, None).unwrap();
        let z2: Vec<f64> = model.martingale.terminal(&model.tree).iter().map(|m| m.cos()).collect();
        let z1: Vec<f64> = z2.iter().map(|v| v + 0.01).collect();
        let f2 = DriverConfig::Truncated { gamma: 1.0, b: 0.3, eta: 0.0, p: 0.8 }.build().unwrap();
        let f1 = DriverSpec::custom("shifted", Growth::new(0.2, 0.3, 1.0).unwrap(), 0.3, 0.8, {
            let f2 = f2.clone();
            move |t, x, m, y, z| f2.eval(t, x, m, y, z) + 0.1
        });
        let (s1, s2) = (solve_lipschitz(&ctx, &z1, &f1).unwrap(), solve_lipschitz(&ctx, &z2, &f2).unwrap());
        let side = |zeta, driver, solution| ComparisonSide { zeta, driver, solution };
        assert!(monotonicity_margin(&ctx, 0.8) <= 1.0);
        let v = compare(&ctx, side(&z1, &f1, &s1), side(&z2, &f2, &s2));
        assert!(matches!(v, ComparisonVerdict::Holds { worst } if worst < 0.0), "{v:?}");
        let back = compare(&ctx, side(&z2, &f2, &s2), side(&z1, &f1, &s1));
        assert!(matches!(back, ComparisonVerdict::NotApplicable { .. }));
    }

    #[test]
    fn margin_on_the_binary_walk() {
        let model = build(&ModelConfig::new(ModelKind::Binary, 16)).unwrap();
        let clock = predictable_bracket(&model.tree, &model.martingale).unwrap();
        let ctx = BsdeContext::new(&model.tree, &model.martingale, &clock, None).unwrap();
        // |dM| q dC / Sigma = sqrt(dC) on a binary step
        let expected = (0..model.tree.n_internal()).map(|i| clock.dc.value(i).sqrt()).fold(0.0, f64::max);
        assert!((monotonicity_margin(&ctx, 1.0) - expected).abs() < 1e-12);
    }
}
