//! Fractional k-Hessian operators: envelope representation, anisotropic
//! nonlocal quadrature, ellipticity constants and a global fixed-point solver.

pub mod cli;
pub mod constants;
pub mod envelope;
pub mod error;
pub mod experiments;
pub mod fracop;
pub mod grid;
pub mod infimum;
pub mod optim;
pub mod quad;
pub mod report;
pub mod solver;
pub mod sphere;
pub mod symcone;

pub use error::{Error, Result};
