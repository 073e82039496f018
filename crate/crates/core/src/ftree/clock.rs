use super::ops::{increment_moments, require_martingale};
use super::{AdaptedProcess, PredictableField, ScenarioTree};
use crate::numeric::psd_cholesky;
use crate::{tolerances, Error, Result};

/// The clock `C = arctan(sum_i <M^i>)` built from the predictable bracket,
/// its increments, and the lower-triangular factor `q` with
/// `q q^T dC = E[dM dM^T | node]`.
#[derive(Debug, Clone)]
pub struct ClockAndFactor {
    /// Scalar clock value per node.
    pub c: AdaptedProcess,
    /// Scalar clock increment per internal node.
    pub dc: PredictableField,
    /// Row-major `d x d` lower-triangular factor per internal node.
    pub q: PredictableField,
    /// Conditional covariance of the next increment per internal node.
    pub sigma: PredictableField,
    /// Accumulated trace of the predictable bracket per node.
    pub trace: AdaptedProcess,
}

impl ClockAndFactor {
    pub fn max_dc(&self) -> f64 {
        self.dc.max_abs()
    }

    /// Largest clock value over terminal nodes.
    pub fn terminal_max(&self, tree: &ScenarioTree) -> f64 {
        tree.leaves().map(|i| self.c.value(i)).fold(f64::MIN, f64::max)
    }

    /// `z = Z q^T` for the integrand at `node`.
    pub fn z_argument(&self, node: usize, integrand: &[f64]) -> Vec<f64> {
        let d = integrand.len();
        crate::numeric::row_times_transpose(integrand, self.q.get(node), d)
    }

    /// Largest entry-wise deviation of `q q^T dC` from the conditional
    /// covariance over all nodes.
    pub fn factor_residual(&self, tree: &ScenarioTree) -> f64 {
        let d = tree.dim();
        let mut worst: f64 = 0.0;
        for i in 0..tree.n_internal() {
            let q = self.q.get(i);
            let s = self.sigma.get(i);
            let dc = self.dc.value(i);
            for a in 0..d {
                for b in 0..d {
                    let qq: f64 = (0..d).map(|k| q[a * d + k] * q[b * d + k]).sum();
                    worst = worst.max((qq * dc - s[a * d + b]).abs());
                }
            }
        }
        worst
    }
}

/// Clock and factor of a martingale started with zero accumulated bracket.
pub fn predictable_bracket(tree: &ScenarioTree, m: &AdaptedProcess) -> Result<ClockAndFactor> {
    predictable_bracket_from(tree, m, 0.0)
}

/// Clock and factor when the bracket trace has already accumulated `v0`
/// before the root (used for restarted sub-problems).
pub fn predictable_bracket_from(tree: &ScenarioTree, m: &AdaptedProcess, v0: f64) -> Result<ClockAndFactor> {
    m.check(tree, "predictable_bracket input")?;
    if m.dim() != tree.dim() {
        return Err(Error::DimensionMismatch {
            expected: tree.dim(),
            got: m.dim(),
            context: "martingale dimension",
        });
    }
    require_martingale(tree, m, tolerances::MARTINGALE.max(1e-10))?;
    let d = m.dim();
    let n = tree.n_nodes();
    let mut trace = vec![f64::NAN; n];
    trace[0] = v0;
    let mut sigma = PredictableField::zeros(tree, d * d);
    let mut q = PredictableField::zeros(tree, d * d);
    let mut dc = PredictableField::zeros(tree, 1);
    for i in 0..tree.n_internal() {
        let (cov, _) = increment_moments(tree, m, i);
        let tr: f64 = (0..d).map(|a| cov[a * d + a]).sum();
        let v = trace[i];
        let v_next = v + tr;
        for e in tree.edges(i) {
            let c = tree.child(e);
            if trace[c].is_nan() {
                trace[c] = v_next;
            } else if (trace[c] - v_next).abs() > 1e-12 * v_next.abs().max(1.0) {
                return Err(Error::NotRecombining(format!(
                    "bracket trace at node {c} depends on the path ({} vs {v_next})",
                    trace[c]
                )));
            }
        }
        let inc = v_next.atan() - v.atan();
        if tr > 0.0 && inc > 0.0 {
            dc.get_mut(i)[0] = inc;
            let scaled: Vec<f64> = cov.iter().map(|s| s / inc).collect();
            let l = psd_cholesky(&scaled, d).map_err(|pivot| Error::NotPsd { node: i, pivot })?;
            q.get_mut(i).copy_from_slice(&l);
        }
        sigma.get_mut(i).copy_from_slice(&cov);
    }
    let c: Vec<f64> = trace.iter().map(|v| v.atan()).collect();
    Ok(ClockAndFactor {
        c: AdaptedProcess::scalar(tree, c)?,
        dc,
        q,
        sigma,
        trace: AdaptedProcess::scalar(tree, trace)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ftree::{EdgeSpec, TimeGrid};

    fn binary(steps: usize, h: f64) -> (ScenarioTree, AdaptedProcess) {
        let grid = TimeGrid::uniform(1.0, steps).unwrap();
        let mut sizes = vec![1usize];
        let mut edges = Vec::new();
        let mut values = vec![0.0];
        let mut next_id = 1;
        for k in 0..steps {
            let n = sizes[k];
            let start = next_id - n;
            for i in start..start + n {
                edges.push(vec![
                    EdgeSpec { child: next_id, prob: 0.5 },
                    EdgeSpec { child: next_id + 1, prob: 0.5 },
                ]);
                values.push(values[i] - h);
                values.push(values[i] + h);
                next_id += 2;
            }
            sizes.push(2 * n);
        }
        let tree = ScenarioTree::new(grid, 1, &sizes, edges).unwrap();
        let m = AdaptedProcess::scalar(&tree, values).unwrap();
        (tree, m)
    }

    #[test]
    fn binary_clock_is_deterministic() {
        let h = 0.5;
        let (tree, m) = binary(3, h);
        let cf = predictable_bracket(&tree, &m).unwrap();
        for i in 0..tree.n_internal() {
            let k = tree.node_level(i) as f64;
            let dc = (h * h * (k + 1.0)).atan() - (h * h * k).atan();
            assert!((cf.dc.value(i) - dc).abs() < 1e-15);
            assert!((cf.q.value(i) - (h * h / dc).sqrt()).abs() < 1e-12);
        }
        for i in tree.leaves() {
            assert!((cf.c.value(i) - (3.0 * h * h).atan()).abs() < 1e-15);
        }
        assert!(cf.factor_residual(&tree) < 1e-12);
    }

    #[test]
    fn zero_variance_step_has_zero_clock() {
        let grid = TimeGrid::uniform(1.0, 1).unwrap();
        let tree = ScenarioTree::new(grid, 1, &[1, 1], vec![vec![EdgeSpec { child: 1, prob: 1.0 }]]).unwrap();
        let m = AdaptedProcess::scalar(&tree, vec![2.0, 2.0]).unwrap();
        let cf = predictable_bracket(&tree, &m).unwrap();
        assert_eq!(cf.dc.value(0), 0.0);
        assert_eq!(cf.q.value(0), 0.0);
    }

    #[test]
    fn independent_components_give_diagonal_factor() {
        let (v1, v2) = (0.3_f64, 1.2_f64);
        let (a, b) = (v1.sqrt(), v2.sqrt());
        let grid = TimeGrid::uniform(1.0, 1).unwrap();
        let edges = vec![(1..5).map(|child| EdgeSpec { child, prob: 0.25 }).collect()];
        let tree = ScenarioTree::new(grid, 2, &[1, 4], edges).unwrap();
        let values = vec![0.0, 0.0, a, b, a, -b, -a, b, -a, -b];
        let m = AdaptedProcess::new(&tree, 2, values).unwrap();
        let cf = predictable_bracket(&tree, &m).unwrap();
        let dc = cf.dc.value(0);
        assert!((dc - (v1 + v2).atan()).abs() < 1e-15);
        let q = cf.q.get(0);
        assert!((q[0] - (v1 / dc).sqrt()).abs() < 1e-12);
        assert!((q[3] - (v2 / dc).sqrt()).abs() < 1e-12);
        assert!(q[1].abs() < 1e-15 && q[2].abs() < 1e-12);
    }

    #[test]
    fn rejects_non_martingale() {
        let (tree, m) = binary(1, 1.0);
        let shifted = AdaptedProcess::scalar(&tree, vec![0.0, 0.0, 2.0]).unwrap();
        assert!(predictable_bracket(&tree, &shifted).is_err());
        assert!(predictable_bracket(&tree, &m).is_ok());
    }
}
