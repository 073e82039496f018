use serde::{Deserialize, Serialize};

use super::ScenarioTree;
use crate::{Error, Result};

/// One real vector of length `dim` per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptedProcess {
    dim: usize,
    values: Vec<f64>,
}

impl AdaptedProcess {
    pub fn new(tree: &ScenarioTree, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() != tree.n_nodes() * dim {
            return Err(Error::DimensionMismatch {
                expected: tree.n_nodes() * dim.max(1),
                got: values.len(),
                context: "adapted process values",
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite process value at node {}", i / dim)));
        }
        Ok(Self { dim, values })
    }

    pub fn scalar(tree: &ScenarioTree, values: Vec<f64>) -> Result<Self> {
        Self::new(tree, 1, values)
    }

    pub fn constant(tree: &ScenarioTree, value: &[f64]) -> Self {
        let mut values = Vec::with_capacity(tree.n_nodes() * value.len());
        for _ in 0..tree.n_nodes() {
            values.extend_from_slice(value);
        }
        Self { dim: value.len(), values }
    }

    pub fn from_fn<F>(tree: &ScenarioTree, dim: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(usize) -> Vec<f64>,
    {
        let mut values = Vec::with_capacity(tree.n_nodes() * dim);
        for i in 0..tree.n_nodes() {
            let v = f(i);
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                    context: "process value",
                });
            }
            values.extend(v);
        }
        Self::new(tree, dim, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len() / self.dim
    }

    #[inline]
    pub fn get(&self, node: usize) -> &[f64] {
        &self.values[node * self.dim..(node + 1) * self.dim]
    }

    /// First component; the value itself for scalar processes.
    #[inline]
    pub fn value(&self, node: usize) -> f64 {
        self.values[node * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Component-wise map to a new process of dimension `dim`.
    pub fn map<F>(&self, dim: usize, mut f: F) -> AdaptedProcess
    where
        F: FnMut(&[f64]) -> Vec<f64>,
    {
        let mut values = Vec::with_capacity(self.n_nodes() * dim);
        for i in 0..self.n_nodes() {
            values.extend(f(self.get(i)));
        }
        AdaptedProcess { dim, values }
    }

    pub fn scale(&self, c: f64) -> AdaptedProcess {
        AdaptedProcess { dim: self.dim, values: self.values.iter().map(|v| c * v).collect() }
    }

    pub(crate) fn check(&self, tree: &ScenarioTree, context: &'static str) -> Result<()> {
        if self.values.len() != tree.n_nodes() * self.dim {
            return Err(Error::DimensionMismatch {
                expected: tree.n_nodes() * self.dim,
                got: self.values.len(),
                context,
            });
        }
        Ok(())
    }

    /// Values on the terminal level, in leaf order.
    pub fn terminal(&self, tree: &ScenarioTree) -> Vec<f64> {
        let r = tree.leaves();
        self.values[r.start * self.dim..r.end * self.dim].to_vec()
    }
}

/// One real vector per non-terminal node, applied to the step leaving it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictableField {
    dim: usize,
    values: Vec<f64>,
}

impl PredictableField {
    pub fn zeros(tree: &ScenarioTree, dim: usize) -> Self {
        Self { dim, values: vec![0.0; tree.n_internal() * dim] }
    }

    pub fn new(tree: &ScenarioTree, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != tree.n_internal() * dim {
            return Err(Error::DimensionMismatch {
                expected: tree.n_internal() * dim,
                got: values.len(),
                context: "predictable field values",
            });
        }
        Ok(Self { dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, node: usize) -> &[f64] {
        &self.values[node * self.dim..(node + 1) * self.dim]
    }

    #[inline]
    pub fn get_mut(&mut self, node: usize) -> &mut [f64] {
        &mut self.values[node * self.dim..(node + 1) * self.dim]
    }

    #[inline]
    pub fn value(&self, node: usize) -> f64 {
        self.values[node * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// Values attached to the nodes of one level, in node order.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelValues {
    pub level: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl LevelValues {
    pub fn get(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
