//! Variational solver for the double-phase Dirichlet problem
//!
//! ```text
//! -div(|grad u|^{p-2} grad u + a(x)|grad u|^{q-2} grad u) = f  in Omega,  u = 0 on the boundary
//! ```
//!
//! with a continuation `p -> 1` that tracks the a priori estimates of the
//! limit problem and certifies the limit pair `(u, z)`.
//!
//! Module map:
//! - [`grid`]: Cartesian grids, forward-difference gradient and its transpose, quadrature.
//! - [`weights`]: weight presets, Lipschitz and Muckenhoupt estimates, the (H0) check.
//! - [`orlicz`]: modulars, Luxemburg norms, Sobolev constants, smallness and Hölder checks.
//! - [`solver`]: fixed-`p` energy, gradient, damped Newton, weak residual and flux.
//! - [`continuation`]: the `p -> 1` march, per-step diagnostics and the limit certificate.
//! - [`cli_report`]: config parsing, run orchestration and CSV/JSON output.

pub mod cli_report;
pub mod continuation;
pub mod error;
pub mod grid;
pub mod orlicz;
pub mod solver;
pub mod weights;

pub use error::{Error, Result};
pub use grid::{GridDomain, ScalarField, Shape, VectorField};
