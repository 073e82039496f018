//! Named numerical tolerances shared by solvers, invariant checks and tests.

/// Outgoing transition probabilities at a node must sum to one within this.
pub const EDGE_MASS: f64 = 1e-14;

/// Path-probability mass per level must sum to one within this.
pub const LEVEL_MASS: f64 = 1e-12;

/// Default gate for `is_martingale` on constructed models.
pub const MARTINGALE: f64 = 1e-12;

/// Relative eigenvalue / pivot threshold below which a conditional
/// covariance direction is treated as null.
pub const PSD_PIVOT: f64 = 1e-12;

/// Relative eigenvalue threshold for the pseudo-inverse in normal equations.
pub const PINV_EIGEN: f64 = 1e-12;

/// Reconstruction, orthogonality and martingale checks on GKW output.
pub const GKW_IDENTITY: f64 = 1e-11;

/// Backward identity of BSDE solutions, checked edge by edge.
pub const BACKWARD_IDENTITY: f64 = 1e-10;

/// Convergence of the implicit-in-y scalar fixed point.
pub const FIXED_POINT: f64 = 1e-12;

/// Iteration cap of the scalar fixed point.
pub const FIXED_POINT_MAX_ITERS: usize = 200;

/// Sup-norm increment that certifies convergence of a monotone cascade.
pub const CASCADE: f64 = 1e-8;

/// Slack on the uniform bound of cascade stages.
pub const BOUND: f64 = 1e-8;

/// Comparison verdict slack.
pub const COMPARISON: f64 = 1e-11;

/// Grouping tolerance for Markov-representation checks.
pub const GROUPING: f64 = 1e-9;

/// Default node cap for exact trees.
pub const NODE_CAP: usize = 5_000_000;

/// Floor applied to discrete measure-change weights.
pub const REWEIGHT_FLOOR: f64 = 1e-9;
