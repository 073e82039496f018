use super::{AdaptedProcess, LevelValues, ScenarioTree};
use crate::numeric::CompensatedSum;
use crate::{Error, Result};

/// `E[X_{k+1} | F_k]` on the nodes of level `k`.
pub fn cond_exp(tree: &ScenarioTree, x: &AdaptedProcess, k: usize) -> Result<LevelValues> {
    cond_exp_from(tree, x, k + 1, k)
}

/// `E[X_from | F_to]` on the nodes of level `to`, by repeated one-step
/// averaging (the tower property is exact by construction).
pub fn cond_exp_from(tree: &ScenarioTree, x: &AdaptedProcess, from: usize, to: usize) -> Result<LevelValues> {
    x.check(tree, "cond_exp input")?;
    let levels = tree.steps() + 1;
    if from >= levels || to > from {
        return Err(Error::LevelOutOfRange { level: from.max(to), levels });
    }
    let d = x.dim();
    let start = tree.level(from).start;
    let mut current: Vec<f64> = tree.level(from).flat_map(|i| x.get(i).to_vec()).collect();
    let mut current_start = start;
    for k in (to..from).rev() {
        let r = tree.level(k);
        let mut next = vec![0.0; r.len() * d];
        for (li, i) in r.clone().enumerate() {
            for c in 0..d {
                let mut acc = CompensatedSum::new();
                for e in tree.edges(i) {
                    let j = tree.child(e) - current_start;
                    acc.add(tree.edge_prob(e) * current[j * d + c]);
                }
                next[li * d + c] = acc.value();
            }
        }
        current = next;
        current_start = r.start;
    }
    Ok(LevelValues { level: to, dim: d, values: current })
}

/// Expectation of `X_k` over all level-`k` nodes.
pub fn level_mean(tree: &ScenarioTree, x: &AdaptedProcess, k: usize) -> Vec<f64> {
    let d = x.dim();
    (0..d)
        .map(|c| tree.level(k).map(|i| tree.prob(i) * x.get(i)[c]).collect::<CompensatedSum>().value())
        .collect()
}

/// Outcome of [`is_martingale`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleCheck {
    pub is_martingale: bool,
    /// Largest component-wise `|E[M_{k+1}|node] - M_k|`.
    pub violation: f64,
    pub worst_node: Option<usize>,
}

/// One-step martingale test at every internal node.
pub fn is_martingale(tree: &ScenarioTree, m: &AdaptedProcess, tol: f64) -> MartingaleCheck {
    let d = m.dim();
    let mut worst = 0.0;
    let mut worst_node = None;
    for i in 0..tree.n_internal() {
        let here = m.get(i);
        for c in 0..d {
            let mut acc = CompensatedSum::new();
            for e in tree.edges(i) {
                acc.add(tree.edge_prob(e) * (m.get(tree.child(e))[c] - here[c]));
            }
            let v = acc.value().abs();
            if v > worst || (v.is_nan() && worst_node.is_none()) {
                worst = v;
                worst_node = Some(i);
            }
        }
    }
    MartingaleCheck { is_martingale: worst <= tol, violation: worst, worst_node }
}

pub(crate) fn require_martingale(tree: &ScenarioTree, m: &AdaptedProcess, tol: f64) -> Result<()> {
    let check = is_martingale(tree, m, tol);
    if check.is_martingale {
        Ok(())
    } else {
        Err(Error::NotMartingale { node: check.worst_node.unwrap_or(0), violation: check.violation })
    }
}

/// Increment `M_child - M_parent` along `edge`, written into `out`.
#[inline]
pub(crate) fn increment(tree: &ScenarioTree, m: &AdaptedProcess, edge: usize, out: &mut [f64]) {
    let a = m.get(tree.edge_parent(edge));
    let b = m.get(tree.child(edge));
    for c in 0..out.len() {
        out[c] = b[c] - a[c];
    }
}

/// Conditional covariance `E[dM dM^T | node]` (row-major `d x d`) and mean.
pub(crate) fn increment_moments(
    tree: &ScenarioTree,
    m: &AdaptedProcess,
    node: usize,
) -> (Vec<f64>, Vec<f64>) {
    let d = m.dim();
    let mut mean = vec![0.0; d];
    let mut dm = vec![0.0; d];
    for e in tree.edges(node) {
        increment(tree, m, e, &mut dm);
        let p = tree.edge_prob(e);
        for c in 0..d {
            mean[c] += p * dm[c];
        }
    }
    let mut cov = vec![0.0; d * d];
    for e in tree.edges(node) {
        increment(tree, m, e, &mut dm);
        let p = tree.edge_prob(e);
        for a in 0..d {
            let da = dm[a] - mean[a];
            for b in 0..=a {
                cov[a * d + b] += p * da * (dm[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            cov[b * d + a] = cov[a * d + b];
        }
    }
    (cov, mean)
}

/// Realized bracket `sum dM dM^T` along each node's path (`d x d` per node).
pub fn pathwise_bracket(tree: &ScenarioTree, m: &AdaptedProcess) -> Result<AdaptedProcess> {
    tree.require_tree("pathwise_bracket")?;
    m.check(tree, "pathwise_bracket input")?;
    let d = m.dim();
    let dd = d * d;
    let mut values = vec![0.0; tree.n_nodes() * dd];
    let mut dm = vec![0.0; d];
    for i in 0..tree.n_internal() {
        for e in tree.edges(i) {
            let c = tree.child(e);
            increment(tree, m, e, &mut dm);
            for a in 0..d {
                for b in 0..d {
                    values[c * dd + a * d + b] = values[i * dd + a * d + b] + dm[a] * dm[b];
                }
            }
        }
    }
    AdaptedProcess::new(tree, dd, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ftree::{EdgeSpec, TimeGrid};

    fn trinomial_one_step(h: f64) -> (ScenarioTree, AdaptedProcess) {
        let grid = TimeGrid::uniform(1.0, 1).unwrap();
        let probs = [0.25, 0.5, 0.25];
        let edges = vec![(1..4).zip(probs).map(|(child, prob)| EdgeSpec { child, prob }).collect()];
        let tree = ScenarioTree::new(grid, 1, &[1, 3], edges).unwrap();
        let m = AdaptedProcess::scalar(&tree, vec![0.0, -h, 0.0, h]).unwrap();
        (tree, m)
    }

    #[test]
    fn trinomial_second_moment() {
        let h = 1.7;
        let (tree, m) = trinomial_one_step(h);
        let sq = m.map(1, |v| vec![v[0] * v[0]]);
        let e = cond_exp(&tree, &sq, 0).unwrap();
        assert!((e.get(0)[0] - h * h / 2.0).abs() < 1e-15);
        assert_eq!(cond_exp(&tree, &m, 0).unwrap().get(0)[0], 0.0);
        assert!(cond_exp(&tree, &m, 1).is_err());
    }

    #[test]
    fn drift_breaks_martingale_by_step_mean() {
        let (tree, m) = trinomial_one_step(1.0);
        assert!(is_martingale(&tree, &m, 1e-12).is_martingale);
        let drifted =
            AdaptedProcess::from_fn(&tree, 1, |i| vec![m.value(i) + 0.1 * tree.time_of(i)]).unwrap();
        let check = is_martingale(&tree, &drifted, 1e-12);
        assert!(!check.is_martingale);
        assert!((check.violation - 0.1).abs() < 1e-15);
        assert_eq!(check.worst_node, Some(0));
    }

    #[test]
    fn realized_bracket_per_branch() {
        let (tree, m) = trinomial_one_step(2.0);
        let b = pathwise_bracket(&tree, &m).unwrap();
        assert_eq!(b.values(), &[0.0, 4.0, 0.0, 4.0]);
    }
}
