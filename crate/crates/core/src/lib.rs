//! Steady two-dimensional flow of a nonhomogeneous, incompressible
//! micropolar fluid in a rectangle.
//!
//! The velocity is carried by a stream function, so it is divergence free
//! by construction and the density is transported exactly: it is a fixed
//! function of the stream function, determined by the density on the inflow
//! arc Γ. The nonlinear problem is solved by a Picard iteration on the
//! stream function of the homogeneous part `u = v − a`, with the
//! microrotation solved in between.
//!
//! Entry points: [`io::parse_config`] and [`RunConfig::to_problem`] for a
//! configured run, [`picard::solve`] for the solve, and [`verify`] for
//! manufactured solutions and reductions.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boundary;
pub mod error;
pub mod fields;
pub mod io;
pub mod linalg;
pub mod microrotation;
pub mod momentum;
pub mod picard;
pub mod poisson;
pub mod streamfunction;
pub mod verify;

pub use error::{Error, Result};
pub use fields::{GridSpec, ScalarField, VectorField};
pub use io::RunConfig;
pub use microrotation::FluidParams;
pub use momentum::ProblemSpec;
pub use picard::{solve, Solution, SolveStatus, SolverOptions};
