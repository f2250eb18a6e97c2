use std::sync::Arc;

use super::grid::{Grid, Topology};
use crate::error::{Error, Result};
use crate::field::{ScalarField, Vector};

/// Nodal values on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl DiscreteField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "field has {} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("field values must be finite"));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&Vector) -> f64) -> Self {
        let values = grid.nodes().map(|(_, x)| f(&x)).collect();
        Self { grid, values }
    }

    pub fn sample(grid: Arc<Grid>, f: &dyn ScalarField) -> Self {
        Self::from_fn(grid, |x| f.value(x))
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![c; n],
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn axpy(&self, a: f64, other: &DiscreteField) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(x, y)| x + a * y).collect(),
        }
    }
}

/// Tensor cubic Lagrange interpolation of nodal data.
#[derive(Clone, Debug)]
pub struct GridInterpolant {
    field: DiscreteField,
}

impl GridInterpolant {
    pub fn new(field: DiscreteField) -> Self {
        Self { field }
    }

    /// Four stencil node indices and Lagrange weights along one axis.
    fn stencil(&self, axis: usize, x: f64) -> ([usize; 4], [f64; 4]) {
        let ax = self.field.grid.axis(axis);
        let n = ax.len();
        let h = ax.spacing();
        let (base, nodes): (i64, [f64; 4]) = match ax.topology() {
            Topology::Periodic => {
                let rel = (x - ax.start()).rem_euclid(ax.length());
                let i = (rel / h).floor() as i64;
                let b = i - 1;
                (b, [0, 1, 2, 3].map(|k| x - rel + h * (b + k) as f64))
            }
            Topology::Interval => {
                let i = ((x - ax.start()) / h).floor() as i64;
                let b = (i - 1).clamp(0, n as i64 - 4);
                (b, [0, 1, 2, 3].map(|k| ax.coords()[(b + k) as usize]))
            }
        };
        let idx = [0, 1, 2, 3].map(|k| (base + k).rem_euclid(n as i64) as usize);
        let mut w = [1.0; 4];
        for (j, wj) in w.iter_mut().enumerate() {
            for m in 0..4 {
                if m != j {
                    *wj *= (x - nodes[m]) / (nodes[j] - nodes[m]);
                }
            }
        }
        (idx, w)
    }
}

impl ScalarField for GridInterpolant {
    fn value(&self, x: &Vector) -> f64 {
        let grid = &self.field.grid;
        let d = grid.dim();
        let stencils: Vec<([usize; 4], [f64; 4])> = (0..d).map(|a| self.stencil(a, x[a])).collect();
        let mut total = 0.0;
        for combo in 0..4usize.pow(d as u32) {
            let mut rem = combo;
            let mut flat = 0;
            let mut w = 1.0;
            for (a, (idx, wt)) in stencils.iter().enumerate() {
                let k = rem % 4;
                rem /= 4;
                flat += idx[k] * grid.stride(a);
                w *= wt[k];
            }
            total += w * self.field.values[flat];
        }
        total
    }
}
