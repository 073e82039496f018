use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Discretization `t_0 < t_1 < ... < t_K` of the horizon.
///
/// Full grids start at `0`; grids of restarted sub-problems start at the
/// restart time and keep absolute time values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidGrid("need at least one step".into()));
        }
        if !(points[0] >= 0.0) {
            return Err(Error::InvalidGrid(format!("t[0] = {} < 0", points[0])));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid("non-finite time point".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("time points must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    /// `K` equal steps on `[0, horizon]`.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidGrid("K must be >= 1".into()));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidGrid(format!("horizon {horizon} must be positive")));
        }
        let dt = horizon / steps as f64;
        let mut points: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
        points[steps] = horizon;
        Self::new(points)
    }

    /// Number of steps `K`.
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn time(&self, k: usize) -> f64 {
        self.points[k]
    }

    pub fn horizon(&self) -> f64 {
        self.points[self.steps()]
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.points[k + 1] - self.points[k]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Sub-grid `t_k, ..., t_K`.
    pub fn tail(&self, k: usize) -> Result<Self> {
        if k >= self.steps() {
            return Err(Error::LevelOutOfRange { level: k, levels: self.points.len() });
        }
        Self::new(self.points[k..].to_vec())
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = Error;
    fn try_from(points: Vec<f64>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(g: TimeGrid) -> Self {
        g.points
    }
}
