//! Quadratic drivers by monotone regularization.
//!
//! For a radial driver `f` with quadratic growth and indices `p <= n`, the
//! Lipschitz driver `(f^+ - f^{-,p})_n` is solved by the backward scheme.
//! For fixed `p` the solutions increase with `n`; the limits decrease with
//! `p`. Both chains stop when the sup-norm increment falls below the
//! tolerance, extending the given index lists by doubling when needed.

use serde::{Deserialize, Serialize};

use super::driver::{cascade_driver, DriverSpec, EnvelopeOptions};
use super::lipschitz::{solve_lipschitz, BsdeContext, BsdeSolution};
use crate::{tolerances, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeOptions {
    pub p_list: Vec<f64>,
    pub n_list: Vec<f64>,
    /// Stopping tolerance on sup-norm increments, also the allowance for
    /// monotonicity violations.
    pub tol: f64,
    /// Largest index the doubling extension may reach.
    pub max_index: f64,
    /// Grid spacing for tabulated drivers.
    pub delta: f64,
    /// Grid for tabulated drivers; derived from the a priori bound when
    /// absent.
    pub envelope: Option<EnvelopeOptions>,
    /// Fail on monotonicity violations beyond `tol` instead of recording
    /// them.
    pub strict: bool,
}

impl Default for CascadeOptions {
    fn default() -> Self {
        Self {
            p_list: vec![1.0, 2.0, 4.0, 8.0],
            n_list: vec![4.0, 8.0, 16.0, 32.0],
            tol: tolerances::CASCADE,
            max_index: 4096.0,
            delta: 0.02,
            envelope: None,
            strict: true,
        }
    }
}

/// One solve in the cascade.
#[derive(Debug, Clone, Serialize)]
pub struct CascadeStage {
    pub p: f64,
    pub n: f64,
    pub y0: f64,
    pub y_sup: f64,
    pub bracket_nn: f64,
    pub max_iterations: usize,
    /// `max |Y - Y_prev|` against the previous stage of the same chain.
    pub increment: Option<f64>,
    /// Largest step against the expected direction (`Y_prev - Y` along
    /// `n`, `Y - Y_prev` across `p`); non-positive when monotone.
    pub violation: Option<f64>,
    /// True for the last stage of a `p` chain, whose solution is the
    /// limit in `n` for that `p`.
    pub closes_p: bool,
}

/// The a priori bounds on `|Y|` from the growth constants.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundCheck {
    /// `exp(b C_K) (|zeta|_inf + a C_K)`.
    pub clock_bound: f64,
    /// `exp(b) (|zeta|_inf + a)`, using `C_K <= 1`.
    pub unit_bound: f64,
    pub y_sup: f64,
    /// Largest `max|Y| - clock_bound` over all stages.
    pub worst_excess: f64,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        self.worst_excess <= tolerances::BOUND
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticSolution {
    pub solution: BsdeSolution,
    pub trace: Vec<CascadeStage>,
    /// False when an index reached `max_index` before the increments
    /// dropped below the tolerance.
    pub converged: bool,
    /// Worst violation of monotonicity in `n` (non-positive when none).
    pub n_violation: f64,
    /// Worst violation of monotonicity in `p` (non-positive when none).
    pub p_violation: f64,
    pub bound: BoundCheck,
    /// True when the driver has no negative part and the `p` chain was
    /// not needed.
    pub p_trivial: bool,
}

/// `exp(b C) (|zeta|_inf + a C)`.
pub fn a_priori_bound(zeta_sup: f64, a: f64, b: f64, c: f64) -> f64 {
    (b * c).exp() * (zeta_sup + a * c)
}

fn index_chain(list: &[f64], floor: f64, max_index: f64) -> Vec<f64> {
    let mut out: Vec<f64> = list.iter().copied().filter(|&v| v >= floor).collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    if out.is_empty() {
        out.push(floor);
    }
    let mut next = out[out.len() - 1] * 2.0;
    while next <= max_index {
        out.push(next);
        next *= 2.0;
    }
    out
}

fn auto_envelope(ctx: &BsdeContext<'_>, bound: f64, delta: f64) -> EnvelopeOptions {
    let dc_min = ctx.clock.dc.values().iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
    let r = if dc_min.is_finite() { 2.0 * bound / dc_min.sqrt() } else { 1.0 };
    EnvelopeOptions { y_radius: 1.25 * bound + 0.5, r_radius: r + 0.5, delta, max_enlargements: 4 }
}

/// Solves with [`solve_lipschitz`] when the driver is Lipschitz and
/// through the cascade otherwise. The trace is empty in the first case.
pub fn solve_auto(
    ctx: &BsdeContext<'_>,
    zeta: &[f64],
    f: &DriverSpec,
    options: &CascadeOptions,
) -> Result<QuadraticSolution> {
    if !f.is_lipschitz() {
        return solve_quadratic(ctx, zeta, f, options);
    }
    let solution = solve_lipschitz(ctx, zeta, f)?;
    let growth = f.growth();
    let zeta_sup = zeta.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let c_k = ctx.horizon_clock();
    let clock_bound = a_priori_bound(zeta_sup, growth.a, growth.b, c_k);
    Ok(QuadraticSolution {
        bound: BoundCheck {
            clock_bound,
            unit_bound: a_priori_bound(zeta_sup, growth.a, growth.b, 1.0),
            y_sup: solution.diagnostics.y_sup,
            worst_excess: solution.diagnostics.y_sup - clock_bound,
        },
        solution,
        trace: Vec::new(),
        converged: true,
        n_violation: 0.0,
        p_violation: 0.0,
        p_trivial: true,
    })
}

/// Solves the scheme for a quadratic radial driver through the
/// regularization cascade.
pub fn solve_quadratic(
    ctx: &BsdeContext<'_>,
    zeta: &[f64],
    f: &DriverSpec,
    options: &CascadeOptions,
) -> Result<QuadraticSolution> {
    ctx.check_terminal(zeta)?;
    if !f.is_radial() {
        return Err(Error::Unsupported(format!(
            "the quadratic cascade needs a radial driver; {} is custom",
            f.id()
        )));
    }
    if !(options.tol > 0.0) || options.p_list.is_empty() || options.n_list.is_empty() {
        return Err(Error::InvalidParameter(
            "cascade needs a positive tolerance and non-empty index lists".into(),
        ));
    }
    let growth = f.growth();
    let zeta_sup = zeta.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let c_k = ctx.horizon_clock();
    let clock_bound = a_priori_bound(zeta_sup, growth.a, growth.b, c_k);
    let unit_bound = a_priori_bound(zeta_sup, growth.a, growth.b, 1.0);
    let envelope = options.envelope.unwrap_or_else(|| auto_envelope(ctx, clock_bound, options.delta));

    let p_trivial = f.is_nonnegative();
    let p_chain = if p_trivial {
        vec![index_chain(&options.p_list, f64::MIN_POSITIVE, 0.0)[0]]
    } else {
        index_chain(&options.p_list, f64::MIN_POSITIVE, options.max_index)
    };

    let mut trace = Vec::new();
    let mut converged = true;
    let mut n_violation = f64::NEG_INFINITY;
    let mut p_violation = f64::NEG_INFINITY;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut previous_p: Option<BsdeSolution> = None;
    let mut p_converged = false;

    for &p in &p_chain {
        let n_chain = index_chain(&options.n_list, p.max(growth.b), options.max_index.max(p));
        let mut previous_n: Option<BsdeSolution> = None;
        let mut n_converged = false;
        for &n in &n_chain {
            let g = cascade_driver(f, p, n, &envelope)?;
            let sol = solve_lipschitz(ctx, zeta, &g)?;
            worst_excess = worst_excess.max(sol.diagnostics.y_sup - clock_bound);
            let (increment, violation) = match &previous_n {
                Some(prev) => {
                    let v = prev
                        .y
                        .values()
                        .iter()
                        .zip(sol.y.values())
                        .map(|(a, b)| a - b)
                        .fold(f64::NEG_INFINITY, f64::max);
                    (Some(sol.sup_distance(prev)), Some(v))
                }
                None => (None, None),
            };
            if let Some(v) = violation {
                n_violation = n_violation.max(v);
                if options.strict && v > options.tol {
                    return Err(Error::NonMonotoneCascade {
                        stage: format!("n = {n} at p = {p}"),
                        violation: v,
                    });
                }
            }
            trace.push(CascadeStage {
                p,
                n,
                y0: sol.y0(),
                y_sup: sol.diagnostics.y_sup,
                bracket_nn: sol.bracket_nn(),
                max_iterations: sol.diagnostics.max_iterations(),
                increment,
                violation,
                closes_p: false,
            });
            previous_n = Some(sol);
            if increment.is_some_and(|d| d < options.tol) {
                n_converged = true;
                break;
            }
        }
        converged &= n_converged;
        let limit = previous_n.expect("index chains are non-empty");
        if let Some(last) = trace.last_mut() {
            last.closes_p = true;
        }
        let p_step = previous_p.as_ref().map(|prev| {
            let v = limit
                .y
                .values()
                .iter()
                .zip(prev.y.values())
                .map(|(a, b)| a - b)
                .fold(f64::NEG_INFINITY, f64::max);
            (limit.sup_distance(prev), v)
        });
        previous_p = Some(limit);
        if let Some((inc, v)) = p_step {
            p_violation = p_violation.max(v);
            if options.strict && v > options.tol {
                return Err(Error::NonMonotoneCascade { stage: format!("p = {p}"), violation: v });
            }
            if inc < options.tol {
                p_converged = true;
                break;
            }
        }
    }
    if !p_trivial {
        converged &= p_converged;
    }
    let solution = previous_p.expect("p chain is non-empty");
    Ok(QuadraticSolution {
        bound: BoundCheck { clock_bound, unit_bound, y_sup: solution.diagnostics.y_sup, worst_excess },
        solution,
        trace,
        converged,
        n_violation: if n_violation.is_finite() { n_violation } else { 0.0 },
        p_violation: if p_violation.is_finite() { p_violation } else { 0.0 },
        p_trivial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::driver::DriverConfig;
    use crate::ftree::predictable_bracket;
    use crate::models::{build, ModelConfig, ModelKind};

    #[test]
    fn chains_extend_by_doubling() {
        assert_eq!(index_chain(&[4.0, 8.0], 5.0, 40.0), vec![8.0, 16.0, 32.0]);
        assert_eq!(index_chain(&[1.0], 3.0, 10.0), vec![3.0, 6.0]);
    }

    #[test]
    fn cole_hopf_on_a_short_binary_tree() {
        let model = build(&ModelConfig::new(ModelKind::Binary, 16)).unwrap();
        let clock = predictable_bracket(&model.tree, &model.martingale).unwrap();
        let ctx = BsdeContext::new(&model.tree, &model.martingale, &clock, None).unwrap();
        let zeta: Vec<f64> = model.martingale.terminal(&model.tree).iter().map(|m| m.sin()).collect();
        for gamma in [1.0, -1.0] {
            let f = DriverConfig::PureQuadratic { gamma }.build().unwrap();
            let q = solve_quadratic(&ctx, &zeta, &f, &CascadeOptions::default()).unwrap();
            assert!(q.converged);
            assert!(q.n_violation <= 1e-8 && q.p_violation <= 1e-8);
            let tree = &model.tree;
            let e: f64 = tree.leaves().zip(&zeta).map(|(i, z)| tree.prob(i) * (gamma * z).exp()).sum();
            let oracle = e.ln() / gamma;
            assert!(
                (q.solution.y0() - oracle).abs() < 2e-2,
                "gamma={gamma}: {} vs {oracle}",
                q.solution.y0()
            );
            assert!(q.bound.holds());
        }
    }

    #[test]
    fn mixed_driver_runs_both_chains() {
        let model = build(&ModelConfig::new(ModelKind::Binary, 8)).unwrap();
        let clock = predictable_bracket(&model.tree, &model.martingale).unwrap();
        let ctx = BsdeContext::new(&model.tree, &model.martingale, &clock, None).unwrap();
        let zeta: Vec<f64> = model.martingale.terminal(&model.tree).iter().map(|m| (2.0 * m).cos()).collect();
        let f = DriverConfig::QuadraticMixed { gamma: 1.0, b: 0.5, eta: 0.1 }.build().unwrap();
        let q = solve_quadratic(&ctx, &zeta, &f, &CascadeOptions::default()).unwrap();
        assert!(!q.p_trivial);
        assert!(q.converged, "{:?}", q.trace);
        assert!(q.n_violation <= 1e-8 && q.p_violation <= 1e-8);
        assert!(q.trace.iter().filter(|s| s.closes_p).count() >= 2);
    }
}
