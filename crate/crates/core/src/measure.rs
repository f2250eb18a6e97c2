//! Smooth reference measures `m = e^{-psi} dx` on a chart.

use std::fmt;
use std::sync::Arc;

use crate::field::Vector;
use crate::norms::{DomainBox, FinslerModel};
use crate::spectral::Grid;

type Potential = Arc<dyn Fn(&Vector) -> f64 + Send + Sync>;

/// A positive density `e^{-psi}` against coordinate volume.
///
/// The stored potential is shifted by a log-mass constant once the measure
/// has been normalized on a grid.
#[derive(Clone)]
pub struct WeightedMeasure {
    domain: DomainBox,
    potential: Potential,
    log_mass: f64,
    normalized: bool,
}

impl fmt::Debug for WeightedMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightedMeasure")
            .field("domain", &self.domain)
            .field("log_mass", &self.log_mass)
            .field("normalized", &self.normalized)
            .finish()
    }
}

impl WeightedMeasure {
    pub fn new(domain: DomainBox, potential: impl Fn(&Vector) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            domain,
            potential: Arc::new(potential),
            log_mass: 0.0,
            normalized: false,
        }
    }

    pub fn uniform(domain: DomainBox) -> Self {
        Self::new(domain, |_| 0.0)
    }

    /// `psi = K/2 * sum of squares over the listed axes`.
    pub fn gaussian(domain: DomainBox, k: f64, axes: Vec<usize>) -> Self {
        Self::new(domain, move |x| {
            0.5 * k * axes.iter().map(|&i| x[i] * x[i]).sum::<f64>()
        })
    }

    /// Riemannian volume of the unit sphere in `(theta, phi)` coordinates.
    pub fn sphere_volume(domain: DomainBox) -> Self {
        Self::new(domain, |x| -x[0].sin().ln())
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn psi(&self, x: &Vector) -> f64 {
        (self.potential)(x) + self.log_mass
    }

    pub fn density(&self, x: &Vector) -> f64 {
        (-self.psi(x)).exp()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Quadrature mass on `grid`.
    pub fn mass_on(&self, grid: &Grid) -> f64 {
        grid.nodes().map(|(i, x)| grid.weight(i) * self.density(&x)).sum()
    }

    /// Shift the potential so that the quadrature mass on `grid` is one.
    pub fn normalized_on(mut self, grid: &Grid) -> Self {
        let psis: Vec<f64> = grid.nodes().map(|(_, x)| (self.potential)(&x)).collect();
        let lo = psis.iter().copied().fold(f64::INFINITY, f64::min);
        let sum: f64 = psis
            .iter()
            .enumerate()
            .map(|(i, p)| grid.weight(i) * (lo - p).exp())
            .sum();
        self.log_mass = sum.ln() - lo;
        self.normalized = true;
        self
    }

    /// `Psi = psi + 1/2 log det g_V`, the log-density against `vol_{g_V}`.
    pub fn psi_with_volume(&self, model: &FinslerModel, x: &Vector, v: &Vector) -> f64 {
        let g = model.g(x, v);
        self.psi(x) + 0.5 * g.determinant().ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Axis;

    #[test]
    fn gaussian_normalizes_to_unit_mass() {
        let grid = Grid::new(vec![Axis::interval(-8.0, 8.0, 801)]);
        let m = WeightedMeasure::gaussian(DomainBox::new(vec![-8.0], vec![8.0]), 1.0, vec![0]).normalized_on(&grid);
        assert!((m.mass_on(&grid) - 1.0).abs() < 1e-12);
        let expected = 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((m.psi(&Vector::zeros(1)) - expected).abs() < 1e-8);
    }
}
