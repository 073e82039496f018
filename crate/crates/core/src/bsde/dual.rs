//! The control representation of the truncated driver.
//!
//! With controls `beta` in `[-b, b]` and `nu` in the ball of radius `p`,
//!
//! ```text
//! V_k = max_{beta, nu} exp(-beta dC) E[w V_{k+1}] + (a - (gamma/2)|nu|^2) dC,
//! w   = 1 + theta . dM,   Sigma theta = gamma q nu dC,
//! ```
//!
//! with `Sigma = E[dM dM^T | node] = q q^T dC`, so that the weights change
//! the one-step measure with `E[w dM] = gamma q nu dC`. The value converges
//! to the solution for the truncated driver as the time grid is refined,
//! with an `O(1/K)` gap.

use serde::Serialize;

use super::driver::Growth;
use super::lipschitz::BsdeContext;
use crate::ftree::AdaptedProcess;
use crate::numeric::{compensated_sum, norm, pinv_solve};
use crate::{tolerances, Error, Result};

/// Candidate controls; the analytic maximizers are added per node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualControls {
    pub beta: Vec<f64>,
    pub nu: Vec<Vec<f64>>,
}

impl DualControls {
    /// `beta_points` equispaced values in `[-b, b]` and, for `d = 1`,
    /// `nu_points` equispaced values in `[-p, p]`; for `d > 1` the `nu`
    /// grid is the product grid clipped to the ball.
    pub fn uniform(b: f64, p: f64, beta_points: usize, nu_points: usize, d: usize) -> Self {
        let line = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
            if n <= 1 {
                return vec![0.5 * (lo + hi)];
            }
            (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
        };
        let beta = line(-b, b, beta_points);
        let axis = line(-p, p, nu_points);
        let mut nu: Vec<Vec<f64>> = vec![Vec::new()];
        for _ in 0..d {
            nu = nu
                .into_iter()
                .flat_map(|v| {
                    axis.iter().map(move |&a| {
                        let mut w = v.clone();
                        w.push(a);
                        w
                    })
                })
                .collect();
        }
        nu.retain(|v| norm(v) <= p * (1.0 + 1e-12));
        Self { beta, nu }
    }
}

#[derive(Debug, Clone)]
pub struct DualValue {
    pub v: AdaptedProcess,
    /// Edges whose weight under the selected controls hit the floor.
    pub floored_edges: usize,
    pub floored_fraction: f64,
}

impl DualValue {
    pub fn v0(&self) -> f64 {
        self.v.value(0)
    }

    pub fn flagged(&self) -> bool {
        self.floored_edges > 0
    }
}

fn project_ball(v: &[f64], radius: f64) -> Vec<f64> {
    let r = norm(v);
    if r <= radius {
        v.to_vec()
    } else {
        v.iter().map(|x| x * radius / r).collect()
    }
}

/// Dynamic programme for the dual value of the problem with terminal
/// value `zeta`, growth constants `(a, b, gamma)` and truncation `p`.
pub fn dual_value(
    ctx: &BsdeContext<'_>,
    zeta: &[f64],
    growth: Growth,
    p: f64,
    controls: &DualControls,
) -> Result<DualValue> {
    ctx.check_terminal(zeta)?;
    if !(p > 0.0) {
        return Err(Error::InvalidParameter(format!("truncation radius must be positive, got {p}")));
    }
    let tree = ctx.tree;
    let proj = ctx.projector();
    let d = proj.dim();
    if controls.nu.iter().any(|v| v.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: controls.nu[0].len(),
            context: "dual control nu",
        });
    }
    let gamma = growth.gamma;
    let mut v = vec![0.0; tree.n_nodes()];
    v[tree.leaves()].copy_from_slice(zeta);
    let mut floored_edges = 0usize;
    let mut weights = Vec::new();
    for k in (0..tree.steps()).rev() {
        for i in tree.level(k) {
            let dc = ctx.clock.dc.value(i);
            let q = ctx.clock.q.get(i);
            let sigma = ctx.clock.sigma.get(i);
            let ev = compensated_sum(tree.edges(i).map(|e| tree.edge_prob(e) * v[tree.child(e)]));
            let zint = proj.project(tree, i, |e| v[tree.child(e)] - ev);
            let zv = ctx.clock.z_argument(i, &zint);

            let mut betas = controls.beta.clone();
            betas.extend([growth.b, -growth.b]);
            let mut best = f64::NEG_INFINITY;
            let mut best_floored = 0usize;
            for &beta in &betas {
                let disc = (-beta * dc).exp();
                let star: Vec<f64> = zv.iter().map(|z| disc * z).collect();
                let extra = project_ball(&star, p);
                for nu in controls.nu.iter().chain(std::iter::once(&extra)) {
                    // theta solves Sigma theta = gamma dC q nu
                    let rhs: Vec<f64> = (0..d)
                        .map(|a| gamma * dc * (0..d).map(|c| q[a * d + c] * nu[c]).sum::<f64>())
                        .collect();
                    let theta = pinv_solve(sigma, &rhs, d);
                    weights.clear();
                    let mut floored = 0usize;
                    for e in tree.edges(i) {
                        let mut w = 1.0 + proj.z_dot_dm(&theta, e);
                        if w < tolerances::REWEIGHT_FLOOR {
                            w = tolerances::REWEIGHT_FLOOR;
                            floored += 1;
                        }
                        weights.push(w);
                    }
                    let mass =
                        compensated_sum(tree.edges(i).zip(&weights).map(|(e, w)| tree.edge_prob(e) * w));
                    let ewv = compensated_sum(
                        tree.edges(i).zip(&weights).map(|(e, w)| tree.edge_prob(e) * w * v[tree.child(e)]),
                    ) / mass;
                    let nu2: f64 = nu.iter().map(|x| x * x).sum();
                    let value = disc * ewv + (growth.a - 0.5 * gamma * nu2) * dc;
                    if value > best {
                        best = value;
                        best_floored = floored;
                    }
                }
            }
            v[i] = best;
            floored_edges += best_floored;
        }
    }
    let floored_fraction = floored_edges as f64 / tree.n_edges().max(1) as f64;
    if floored_fraction > 0.01 {
        return Err(Error::ReweightFloor { fraction: floored_fraction });
    }
    Ok(DualValue { v: AdaptedProcess::scalar(tree, v)?, floored_edges, floored_fraction })
}
