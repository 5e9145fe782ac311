//! Stochastic porous-medium equation with conservative noise on a box:
//! coefficient model, noise generation, finite-volume solver, entropy
//! residuals and numerical experiments.

pub mod error;
pub mod model;
pub mod noise;
pub mod solver;
pub mod entropy;
pub mod experiments;
pub mod cli;

pub use error::{Error, Result};
