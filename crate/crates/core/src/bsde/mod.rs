//! Backward equations driven by a martingale on a finite filtration:
//! Lipschitz solves, the quadratic regularization cascade, the dual
//! control representation, comparison, and the experiment drivers built
//! on them.

pub mod cascade;
pub mod compare;
pub mod driver;
pub mod dual;
pub mod experiments;
pub mod lipschitz;

pub use cascade::{
    a_priori_bound, solve_auto, solve_quadratic, BoundCheck, CascadeOptions, CascadeStage, QuadraticSolution,
};
pub use compare::{compare, monotonicity_margin, ComparisonSide, ComparisonVerdict};
pub use driver::{
    cascade_driver, catalog, huber, inf_convolve, inf_convolve_grid, truncated_driver, DriverConfig,
    DriverSpec, Envelope, EnvelopeOptions, Growth,
};
pub use dual::{dual_value, DualControls, DualValue};
pub use experiments::{
    joint_state, markov_grouping_check, prepare, regularity_scan, vanishing_n_experiment, MarkovReport,
    Prepared, RegularityGrid, RegularityReport, VanishingReport, VanishingRow, VanishingSeries,
    VanishingSetup,
};
pub use lipschitz::{solve_lipschitz, BsdeContext, BsdeSolution, Diagnostics};
