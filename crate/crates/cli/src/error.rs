use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

/// Position of a failing solve within a sweep.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Coords {
    pub model: String,
    pub steps: usize,
    pub epsilon: Option<f64>,
    pub p: Option<f64>,
    pub n: Option<f64>,
}

impl Coords {
    pub fn new(model: &str, steps: usize) -> Self {
        Self { model: model.to_string(), steps, ..Default::default() }
    }

    pub fn epsilon(mut self, epsilon: Option<f64>) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn p(mut self, p: f64) -> Self {
        self.p = Some(p);
        self
    }
}

impl fmt::Display for Coords {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| x.to_string());
        write!(
            f,
            "model={} K={} eps={} p={} n={}",
            self.model,
            self.steps,
            opt(self.epsilon),
            opt(self.p),
            opt(self.n)
        )
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("solver error at {coords}: {source}")]
    Solver {
        coords: Box<Coords>,
        #[source]
        source: Box<orthres::Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Wraps a library error, classifying parameter problems as config
    /// errors.
    pub fn solver(coords: Coords, source: orthres::Error) -> Self {
        use orthres::Error as E;
        match source {
            E::InvalidParameter(_)
            | E::InvalidGrid(_)
            | E::DimensionMismatch { .. }
            | E::NodeCapExceeded { .. }
            | E::Unsupported(_)
            | E::LevelOutOfRange { .. } => CliError::Config(format!("at {coords}: {source}")),
            source => CliError::Solver { coords: Box::new(coords), source: Box::new(source) },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Invariant(_) | CliError::Solver { .. } => 2,
            CliError::Io(_) => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinates_are_printed() {
        let coords = Coords::new("trinomial", 64).epsilon(Some(0.1));
        let err = CliError::solver(coords, orthres::Error::FixedPointNonConvergent { node: 3, iters: 200 });
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("model=trinomial K=64 eps=0.1 p=- n=-"));
        let cap = orthres::Error::NodeCapExceeded { estimated: 10, cap: 5 };
        assert_eq!(CliError::solver(Coords::new("binary", 4), cap).exit_code(), 3);
    }
}
