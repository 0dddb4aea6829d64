//! Inexact moving balls approximation (iMBA) for nonconvex problems with
//! difference-of-convex quadratic constraints.
//!
//! The crate provides the problem model and seeded instance generators, the
//! per-iteration ball model with its inexactness test, a dual proximal-gradient
//! subproblem solver, the outer iMBA driver and a DCA baseline.

pub mod dca;
pub mod driver;
pub mod dual;
pub mod error;
pub mod generator;
pub mod io;
pub mod linalg;
pub mod model;
pub mod problem;
pub mod selftest;

pub use error::{ImbaError, Result};
pub use problem::{KktResidual, QdccProblem};
