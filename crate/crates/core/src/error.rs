use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid scenario tree: {0}")]
    InvalidTree(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("level {level} out of range (tree has {levels} levels)")]
    LevelOutOfRange { level: usize, levels: usize },

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch { expected: usize, got: usize, context: &'static str },

    #[error("process is not a martingale: worst one-step drift {violation:e} at node {node}")]
    NotMartingale { node: usize, violation: f64 },

    #[error("conditional covariance at node {node} is not positive semidefinite (pivot {pivot:e})")]
    NotPsd { node: usize, pivot: f64 },

    #[error("estimated node count {estimated} exceeds cap {cap}")]
    NodeCapExceeded { estimated: u128, cap: usize },

    #[error("{0} requires a non-recombining tree (path-dependent quantity)")]
    PathDependent(&'static str),

    #[error("process is not a function of the lattice node: {0}")]
    NotRecombining(String),

    #[error("contraction violated: Lipschitz constant {lipschitz} times max dC {max_dc:e} >= 1")]
    ContractionViolated { lipschitz: f64, max_dc: f64 },

    #[error("driver is not Lipschitz: {0}")]
    NotLipschitz(String),

    #[error("fixed point did not converge at node {node} after {iters} iterations")]
    FixedPointNonConvergent { node: usize, iters: usize },

    #[error("cascade is not monotone: {stage} violation {violation:e}")]
    NonMonotoneCascade { stage: String, violation: f64 },

    #[error("inf-convolution search box too small: infimum on boundary after radius {radius}")]
    BoxTooSmall { radius: f64 },

    #[error("measure-change weights floored on {fraction:.4} of edges (limit 0.01)")]
    ReweightFloor { fraction: f64 },

    #[error("Markov representation fails: within-group spread {spread:e}")]
    NotMarkov { spread: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
