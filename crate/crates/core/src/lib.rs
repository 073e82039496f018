//! Finite-filtration laboratory for martingale representation and
//! quadratic-growth BSDEs driven by Markov martingales.
//!
//! Everything is computed exactly on scenario trees (or recombining
//! lattices): conditional expectations are finite weighted sums, so the
//! orthogonal component of a Galtchouk-Kunita-Watanabe decomposition can be
//! measured without Monte Carlo noise and compared against its theoretical
//! behaviour under mesh refinement.
//!
//! Module map:
//!
//! * [`ftree`] - time grids, trees, adapted processes, the clock `C` and factor `q`
//! * [`models`] - binary/trinomial walks, product-noise filtrations, jump counterexamples
//! * [`gkw`] - exact GKW projection, residual sweeps, bracket splitting
//! * [`mollify`] - terminal-map catalog, Gaussian mollification, clamping
//! * [`forward`] - Euler scheme for the forward SDE driven by `M`
//! * [`bsde`] - Lipschitz and quadratic BSDE solvers, duality, comparison

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bsde;
pub mod error;
pub mod forward;
pub mod ftree;
pub mod gkw;
pub mod models;
pub mod mollify;
pub mod numeric;
pub mod tolerances;

pub use error::{Error, Result};
