//! Periodic homogenization of the p-Laplacian with a large zero-mean potential.
//!
//! The crate solves the oscillating problem
//! `-div(a(x/ε)|Du|^{p-2}Du) + ε⁻¹ V(x/ε)|u|^{p-2}u = f` on a box with zero
//! Dirichlet data, the periodic cell problems behind its limit, the effective
//! macro models, and runs ε-sweeps that compare the two.

pub mod cell;
pub mod cli;
pub mod config;
pub mod discretization;
pub mod effective;
pub mod epsilon;
pub mod error;
pub mod expr;
pub mod fields;
pub mod harness;
pub mod linalg;
pub mod report;
pub mod solver;

pub use error::{Error, Result};
