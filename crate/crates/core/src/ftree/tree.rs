use std::ops::Range;

use super::TimeGrid;
use crate::numeric::compensated_sum;
use crate::{tolerances, Error, Result};

/// A finite filtered probability space.
///
/// Nodes are stored level by level (root is node `0`, leaves are the last
/// level). Edges are stored grouped by parent, so the children of internal
/// node `i` are `edges(i)`. A tree may be *recombining* (a lattice): nodes
/// then can have several parents and path-dependent quantities are not
/// defined per node.
#[derive(Debug, Clone)]
pub struct ScenarioTree {
    grid: TimeGrid,
    dim: usize,
    level_start: Vec<usize>,
    edge_start: Vec<usize>,
    edge_child: Vec<usize>,
    edge_prob: Vec<f64>,
    edge_parent: Vec<usize>,
    parent: Vec<Option<usize>>,
    node_level: Vec<u32>,
    node_prob: Vec<f64>,
    recombining: bool,
}

/// One outgoing edge as handed to [`ScenarioTree::new`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeSpec {
    pub child: usize,
    pub prob: f64,
}

impl ScenarioTree {
    /// Assemble and validate a tree.
    ///
    /// `level_sizes[k]` is the number of nodes at level `k`; nodes are
    /// numbered consecutively level by level. `edges[i]` lists the children
    /// of internal node `i` (every node not on the last level).
    pub fn new(grid: TimeGrid, dim: usize, level_sizes: &[usize], edges: Vec<Vec<EdgeSpec>>) -> Result<Self> {
        let levels = grid.steps() + 1;
        if level_sizes.len() != levels {
            return Err(Error::InvalidTree(format!(
                "{} level sizes for a grid with {} levels",
                level_sizes.len(),
                levels
            )));
        }
        if dim == 0 {
            return Err(Error::InvalidTree("martingale dimension must be >= 1".into()));
        }
        if level_sizes[0] != 1 {
            return Err(Error::InvalidTree("level 0 must hold exactly the root".into()));
        }
        if level_sizes.contains(&0) {
            return Err(Error::InvalidTree("empty level".into()));
        }
        let mut level_start = Vec::with_capacity(levels + 1);
        level_start.push(0);
        for &n in level_sizes {
            level_start.push(level_start.last().unwrap() + n);
        }
        let n_nodes = *level_start.last().unwrap();
        let n_internal = level_start[levels - 1];
        if edges.len() != n_internal {
            return Err(Error::InvalidTree(format!(
                "{} edge lists for {} internal nodes",
                edges.len(),
                n_internal
            )));
        }

        let mut node_level = vec![0u32; n_nodes];
        for k in 0..levels {
            for i in level_start[k]..level_start[k + 1] {
                node_level[i] = k as u32;
            }
        }

        let n_edges: usize = edges.iter().map(Vec::len).sum();
        let mut edge_start = Vec::with_capacity(n_internal + 1);
        let mut edge_child = Vec::with_capacity(n_edges);
        let mut edge_prob = Vec::with_capacity(n_edges);
        let mut edge_parent = Vec::with_capacity(n_edges);
        let mut parent: Vec<Option<usize>> = vec![None; n_nodes];
        let mut n_parents = vec![0u32; n_nodes];
        edge_start.push(0);
        for (i, out) in edges.into_iter().enumerate() {
            if out.is_empty() {
                return Err(Error::InvalidTree(format!("internal node {i} has no children")));
            }
            let k = node_level[i] as usize;
            let next = level_start[k + 1]..level_start[k + 2];
            for e in &out {
                if !next.contains(&e.child) {
                    return Err(Error::InvalidTree(format!(
                        "edge {i}->{} does not reach level {}",
                        e.child,
                        k + 1
                    )));
                }
                if !(e.prob > 0.0 && e.prob <= 1.0) {
                    return Err(Error::InvalidTree(format!(
                        "edge {i}->{} has probability {} outside (0,1]",
                        e.child, e.prob
                    )));
                }
                if parent[e.child].is_none() {
                    parent[e.child] = Some(i);
                }
                n_parents[e.child] += 1;
                edge_child.push(e.child);
                edge_prob.push(e.prob);
                edge_parent.push(i);
            }
            let mass = compensated_sum(out.iter().map(|e| e.prob));
            if (mass - 1.0).abs() > tolerances::EDGE_MASS {
                return Err(Error::InvalidTree(format!("outgoing probabilities at node {i} sum to {mass}")));
            }
            edge_start.push(edge_child.len());
        }
        if let Some(orphan) = (1..n_nodes).find(|&j| n_parents[j] == 0) {
            return Err(Error::InvalidTree(format!("node {orphan} has no parent")));
        }
        let recombining = n_parents.iter().any(|&p| p > 1);

        let mut node_prob = vec![0.0; n_nodes];
        node_prob[0] = 1.0;
        for i in 0..n_internal {
            let pi = node_prob[i];
            for e in edge_start[i]..edge_start[i + 1] {
                node_prob[edge_child[e]] += pi * edge_prob[e];
            }
        }
        let tree = Self {
            grid,
            dim,
            level_start,
            edge_start,
            edge_child,
            edge_prob,
            edge_parent,
            parent,
            node_level,
            node_prob,
            recombining,
        };
        for k in 0..levels {
            let mass = compensated_sum(tree.level(k).map(|i| tree.node_prob[i]));
            if (mass - 1.0).abs() > tolerances::LEVEL_MASS {
                return Err(Error::InvalidTree(format!("level {k} carries mass {mass}")));
            }
        }
        Ok(tree)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Martingale dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of steps `K`.
    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn n_nodes(&self) -> usize {
        *self.level_start.last().unwrap()
    }

    /// Number of non-terminal nodes (indices `0..n_internal()`).
    pub fn n_internal(&self) -> usize {
        self.level_start[self.steps()]
    }

    pub fn n_edges(&self) -> usize {
        self.edge_child.len()
    }

    pub fn is_recombining(&self) -> bool {
        self.recombining
    }

    pub fn level(&self, k: usize) -> Range<usize> {
        self.level_start[k]..self.level_start[k + 1]
    }

    pub fn level_size(&self, k: usize) -> usize {
        self.level_start[k + 1] - self.level_start[k]
    }

    pub fn leaves(&self) -> Range<usize> {
        self.level(self.steps())
    }

    pub fn node_level(&self, node: usize) -> usize {
        self.node_level[node] as usize
    }

    pub fn time_of(&self, node: usize) -> f64 {
        self.grid.time(self.node_level(node))
    }

    /// Unconditional probability of reaching `node`.
    pub fn prob(&self, node: usize) -> f64 {
        self.node_prob[node]
    }

    /// Edge index range of an internal node.
    pub fn edges(&self, node: usize) -> Range<usize> {
        self.edge_start[node]..self.edge_start[node + 1]
    }

    pub fn child(&self, edge: usize) -> usize {
        self.edge_child[edge]
    }

    pub fn edge_prob(&self, edge: usize) -> f64 {
        self.edge_prob[edge]
    }

    pub fn edge_parent(&self, edge: usize) -> usize {
        self.edge_parent[edge]
    }

    /// Parent of a node in a non-recombining tree (the first parent on a lattice).
    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    /// Edge entering `node` from its (first) parent.
    pub fn parent_edge(&self, node: usize) -> Option<usize> {
        let p = self.parent[node]?;
        self.edges(p).find(|&e| self.edge_child[e] == node)
    }

    /// Largest number of children of any node.
    pub fn max_branching(&self) -> usize {
        (0..self.n_internal()).map(|i| self.edges(i).len()).max().unwrap_or(0)
    }

    pub(crate) fn require_tree(&self, what: &'static str) -> Result<()> {
        if self.recombining {
            Err(Error::PathDependent(what))
        } else {
            Ok(())
        }
    }

    /// Descendants of `node` re-indexed as a standalone tree on the grid
    /// tail starting at the node's level. Returns the tree and the map from
    /// new node index to original node index.
    pub fn subtree(&self, node: usize) -> Result<(ScenarioTree, Vec<usize>)> {
        let k0 = self.node_level(node);
        if k0 >= self.steps() {
            return Err(Error::InvalidParameter(format!("node {node} is terminal and has no subtree")));
        }
        let grid = self.grid.tail(k0)?;
        let mut map: Vec<usize> = vec![node];
        let mut index = std::collections::HashMap::new();
        index.insert(node, 0usize);
        let mut level_sizes = vec![1usize];
        let mut frontier = vec![node];
        let mut edges: Vec<Vec<EdgeSpec>> = Vec::new();
        for _ in k0..self.steps() {
            let mut next = Vec::new();
            for &i in &frontier {
                let mut out = Vec::with_capacity(self.edges(i).len());
                for e in self.edges(i) {
                    let c = self.edge_child[e];
                    let id = *index.entry(c).or_insert_with(|| {
                        map.push(c);
                        next.push(c);
                        map.len() - 1
                    });
                    out.push(EdgeSpec { child: id, prob: self.edge_prob[e] });
                }
                edges.push(out);
            }
            level_sizes.push(next.len());
            frontier = next;
        }
        let tree = ScenarioTree::new(grid, self.dim, &level_sizes, edges)?;
        Ok((tree, map))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_step_binary() -> ScenarioTree {
        let grid = TimeGrid::uniform(1.0, 2).unwrap();
        let e = |c| EdgeSpec { child: c, prob: 0.5 };
        let edges = vec![vec![e(1), e(2)], vec![e(3), e(4)], vec![e(5), e(6)]];
        ScenarioTree::new(grid, 1, &[1, 2, 4], edges).unwrap()
    }

    #[test]
    fn binary_tree_layout() {
        let t = two_step_binary();
        assert_eq!(t.n_nodes(), 7);
        assert_eq!(t.n_internal(), 3);
        assert_eq!(t.n_edges(), 6);
        assert!(!t.is_recombining());
        assert_eq!(t.parent(5), Some(2));
        assert_eq!(t.node_level(4), 2);
        assert_eq!(t.prob(6), 0.25);
        assert_eq!(t.max_branching(), 2);
    }

    #[test]
    fn lattice_marks_recombination() {
        let grid = TimeGrid::uniform(1.0, 2).unwrap();
        let e = |c| EdgeSpec { child: c, prob: 0.5 };
        let edges = vec![vec![e(1), e(2)], vec![e(3), e(4)], vec![e(4), e(5)]];
        let t = ScenarioTree::new(grid, 1, &[1, 2, 3], edges).unwrap();
        assert!(t.is_recombining());
        assert_eq!(t.prob(4), 0.5);
        assert!(t.require_tree("x").is_err());
    }

    #[test]
    fn rejects_bad_probabilities() {
        let grid = TimeGrid::uniform(1.0, 1).unwrap();
        let edges = vec![vec![EdgeSpec { child: 1, prob: 0.5 }, EdgeSpec { child: 2, prob: 0.4 }]];
        assert!(ScenarioTree::new(grid.clone(), 1, &[1, 2], edges).is_err());
        let edges = vec![vec![EdgeSpec { child: 1, prob: 1.0 }, EdgeSpec { child: 2, prob: 0.0 }]];
        assert!(ScenarioTree::new(grid.clone(), 1, &[1, 2], edges).is_err());
        // orphan on level 1
        let edges = vec![vec![EdgeSpec { child: 1, prob: 1.0 }]];
        assert!(ScenarioTree::new(grid, 1, &[1, 2], edges).is_err());
    }

    #[test]
    fn subtree_reindexes() {
        let t = two_step_binary();
        let (s, map) = t.subtree(2).unwrap();
        assert_eq!(s.n_nodes(), 3);
        assert_eq!(map, vec![2, 5, 6]);
        assert_eq!(s.grid().time(0), 0.5);
        assert!(t.subtree(5).is_err());
    }
}
