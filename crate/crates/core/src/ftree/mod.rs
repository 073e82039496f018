//! Finite filtration engine: exact conditional expectations, brackets, the
//! clock `C` and the Cholesky factor `q` on scenario trees.

mod clock;
mod grid;
pub mod io;
mod ops;
mod process;
mod tree;

pub use clock::{predictable_bracket, predictable_bracket_from, ClockAndFactor};
pub use grid::TimeGrid;
pub(crate) use ops::increment;
pub use ops::{cond_exp, cond_exp_from, is_martingale, level_mean, pathwise_bracket, MartingaleCheck};
pub use process::{AdaptedProcess, LevelValues, PredictableField};
pub use tree::{EdgeSpec, ScenarioTree};
