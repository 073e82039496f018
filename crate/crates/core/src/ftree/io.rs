//! JSON round-trip of a tree together with its martingale values.
//!
//! Plain trees are described by their node list alone (`parent` plus the
//! transition probability from the parent). Lattices additionally carry an
//! explicit edge list, since a node may have several parents.

use serde::{Deserialize, Serialize};

use super::ops::require_martingale;
use super::{AdaptedProcess, EdgeSpec, ScenarioTree, TimeGrid};
use crate::{tolerances, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub level: usize,
    pub parent: Option<usize>,
    /// Transition probability from `parent` (1 for the root).
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub parent: usize,
    pub child: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDocument {
    pub grid: TimeGrid,
    pub dim: usize,
    #[serde(default)]
    pub recombining: bool,
    pub nodes: Vec<NodeRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<EdgeRecord>>,
    /// Row-major martingale values, `dim` entries per node.
    pub mart_values: Vec<f64>,
}

impl TreeDocument {
    pub fn from_model(tree: &ScenarioTree, m: &AdaptedProcess) -> Result<Self> {
        m.check(tree, "serialized martingale")?;
        let nodes = (0..tree.n_nodes())
            .map(|i| NodeRecord {
                id: i,
                level: tree.node_level(i),
                parent: tree.parent(i),
                prob: tree.parent_edge(i).map_or(1.0, |e| tree.edge_prob(e)),
            })
            .collect();
        let edges = tree.is_recombining().then(|| {
            (0..tree.n_internal())
                .flat_map(|i| {
                    tree.edges(i).map(move |e| EdgeRecord {
                        parent: i,
                        child: tree.child(e),
                        prob: tree.edge_prob(e),
                    })
                })
                .collect()
        });
        Ok(Self {
            grid: tree.grid().clone(),
            dim: m.dim(),
            recombining: tree.is_recombining(),
            nodes,
            edges,
            mart_values: m.values().to_vec(),
        })
    }

    /// Rebuild and validate the tree and martingale.
    pub fn into_model(self) -> Result<(ScenarioTree, AdaptedProcess)> {
        let levels = self.grid.steps() + 1;
        let mut level_sizes = vec![0usize; levels];
        for (pos, n) in self.nodes.iter().enumerate() {
            if n.id != pos {
                return Err(Error::InvalidTree(format!(
                    "node ids must be consecutive, found {} at position {pos}",
                    n.id
                )));
            }
            if n.level >= levels {
                return Err(Error::LevelOutOfRange { level: n.level, levels });
            }
            if pos > 0 && n.level < self.nodes[pos - 1].level {
                return Err(Error::InvalidTree("nodes must be sorted by level".into()));
            }
            level_sizes[n.level] += 1;
        }
        let n_internal = self.nodes.len() - level_sizes.last().copied().unwrap_or(0);
        let mut edges: Vec<Vec<EdgeSpec>> = vec![Vec::new(); n_internal];
        let mut push = |parent: usize, child: usize, prob: f64| -> Result<()> {
            let slot = edges
                .get_mut(parent)
                .ok_or_else(|| Error::InvalidTree(format!("edge parent {parent} is not an internal node")))?;
            slot.push(EdgeSpec { child, prob });
            Ok(())
        };
        match &self.edges {
            Some(list) => {
                for e in list {
                    push(e.parent, e.child, e.prob)?;
                }
            }
            None => {
                for n in &self.nodes {
                    match (n.level, n.parent) {
                        (0, None) => {}
                        (_, Some(p)) => push(p, n.id, n.prob)?,
                        (_, None) => return Err(Error::InvalidTree(format!("node {} has no parent", n.id))),
                    }
                }
            }
        }
        let tree = ScenarioTree::new(self.grid, self.dim, &level_sizes, edges)?;
        let m = AdaptedProcess::new(&tree, self.dim, self.mart_values)?;
        require_martingale(&tree, &m, tolerances::MARTINGALE)?;
        Ok((tree, m))
    }
}

pub fn to_json(tree: &ScenarioTree, m: &AdaptedProcess) -> Result<String> {
    Ok(serde_json::to_string_pretty(&TreeDocument::from_model(tree, m)?)?)
}

pub fn from_json(text: &str) -> Result<(ScenarioTree, AdaptedProcess)> {
    let doc: TreeDocument = serde_json::from_str(text)?;
    doc.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_round_trip() {
        let grid = TimeGrid::uniform(1.0, 2).unwrap();
        let e = |c| EdgeSpec { child: c, prob: 0.5 };
        let edges = vec![vec![e(1), e(2)], vec![e(3), e(4)], vec![e(4), e(5)]];
        let tree = ScenarioTree::new(grid, 1, &[1, 2, 3], edges).unwrap();
        let m = AdaptedProcess::scalar(&tree, vec![0.0, -1.0, 1.0, -2.0, 0.0, 2.0]).unwrap();
        let text = to_json(&tree, &m).unwrap();
        let (t2, m2) = from_json(&text).unwrap();
        assert!(t2.is_recombining());
        assert_eq!(m2, m);
        assert_eq!(t2.n_edges(), tree.n_edges());
    }

    #[test]
    fn loader_rejects_broken_martingale() {
        let grid = TimeGrid::uniform(1.0, 1).unwrap();
        let e = |c| EdgeSpec { child: c, prob: 0.5 };
        let tree = ScenarioTree::new(grid, 1, &[1, 2], vec![vec![e(1), e(2)]]).unwrap();
        let m = AdaptedProcess::scalar(&tree, vec![0.0, -1.0, 1.0]).unwrap();
        let mut doc = TreeDocument::from_model(&tree, &m).unwrap();
        assert!(doc.edges.is_none());
        doc.mart_values[2] = 1.5;
        assert!(matches!(doc.into_model(), Err(Error::NotMartingale { .. })));
    }
}
