//! Numerical Finsler geometry on coordinate charts: norms and their duals,
//! geodesics and curvature, the nonlinear Laplacian and its spectral gap,
//! functional inequalities with their deficits, one-dimensional needle
//! models, and splitting diagnostics for product spaces.

pub mod error;
pub mod field;
pub mod geometry;
pub mod inequalities;
pub mod measure;
pub mod needles;
pub mod norms;
pub mod rigidity;
pub mod spectral;

pub use error::{Error, Result};
pub use field::{Matrix, ScalarField, Vector};
pub use measure::WeightedMeasure;
pub use norms::{DerivativeScheme, DomainBox, FinslerModel};
