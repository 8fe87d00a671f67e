//! Numerical laboratory for semilinear Hamilton-Jacobi-Bellman equations on
//! the Wasserstein space of the real line.
//!
//! The crate provides grid measures, exact 1D optimal transport, entropy and
//! Fischer information, a conservative Fokker-Planck solver, a mean-field
//! optimal control solver with closed-form oracles, the entropy-penalized
//! doubling maximization, and a harness that checks the quantitative
//! consequences of the theory on desk-scale problems.

pub mod config;
pub mod control;
pub mod doubling;
pub mod error;
pub mod fokker_planck;
pub mod functionals;
pub mod harness;
pub mod measures;
pub mod tabulated;
pub mod transport;

pub use error::{LabError, Result};
pub use measures::{gaussian_on_grid, make_grid, uniform_on_grid, GaussianSpec, Grid1D, GridMeasure};
