//! Structured grids, discrete fields, the weak nonlinear Laplacian, heat
//! flow and the first nonzero eigenvalue.

mod discrete;
mod eigen;
mod grid;
mod weak;

use std::sync::Arc;

pub use discrete::{DiscreteField, GridInterpolant};
pub use eigen::{first_eigenvalue, first_eigenvalue_from, EigenOptions, EigenResult, LevelSummary};
pub use grid::{Axis, Grid, Topology};
pub use weak::{gradient_field, EnergyGradient, WeakForm};

use crate::error::Result;
use crate::measure::WeightedMeasure;
use crate::norms::FinslerModel;

pub fn energy(model: &FinslerModel, measure: &WeightedMeasure, u: &DiscreteField) -> Result<f64> {
    WeakForm::new(model, measure, u.grid().clone())?.energy(u)
}

pub fn nonlinear_laplacian(
    model: &FinslerModel,
    measure: &WeightedMeasure,
    u: &DiscreteField,
) -> Result<DiscreteField> {
    WeakForm::new(model, measure, u.grid().clone())?.laplacian(u)
}

pub fn heat_step(
    model: &FinslerModel,
    measure: &WeightedMeasure,
    u: &DiscreteField,
    tau: f64,
) -> Result<DiscreteField> {
    WeakForm::new(model, measure, u.grid().clone())?.heat_step(u, tau)
}

/// Uniform grid on a symmetric interval, as used for Gaussian lines.
pub fn line_grid(radius: f64, nodes: usize) -> Arc<Grid> {
    Arc::new(Grid::new(vec![Axis::interval(-radius, radius, nodes)]))
}
