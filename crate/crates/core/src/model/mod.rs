//! Problem data and coefficient handling.

pub mod fields;
pub mod ito;
pub mod nonlinearity;
pub mod problem;
pub mod quadrature;
pub mod validate;

pub use fields::{DriftFields, NoiseField, Point, Profile, ScalarMap, Vector, VectorMap};
pub use ito::{ito_from_stratonovich, ItoCoefficients};
pub use nonlinearity::DiffusionNonlinearity;
pub use problem::{truncate_initial, BoxDomain, CoefficientSet, InitialDatum, ProblemSpec};
pub use quadrature::bracket_integral;
pub use validate::{validate_assumptions, ProbeGrid, ValidationReport, Verdict};
