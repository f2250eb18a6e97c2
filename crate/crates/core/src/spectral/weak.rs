//! Weak-form discretization of the nonlinear Laplacian.
//!
//! The energy is a cell sum. Every cell contributes at each of its `2^d`
//! corners, where the differential is the vector of edge difference
//! quotients meeting at that corner. The corner weight is the integral of
//! the density against that corner's multilinear hat over the cell:
//!
//! `E(u) = sum_cells sum_corners w_(c,b) F*(du_(c,b))^2 / 2`.
//!
//! The discrete Laplacian is `Delta u = -grad E(u) / M` with the nodal mass
//! `M_i = sum of the corner weights at node i`, so
//! `sum M phi Delta u = -<dE(u), phi>` holds exactly and heat steps conserve
//! the `M`-mean. Using hat-weighted masses keeps `Delta t = -K t` accurate
//! far out in Gaussian tails, where a point-value density would not.

use std::sync::Arc;

use rayon::prelude::*;

use super::discrete::DiscreteField;
use super::grid::Grid;
use crate::error::{Error, Result};
use crate::field::{Matrix, Vector};
use crate::measure::WeightedMeasure;
use crate::norms::{unit_directions, FinslerModel};

const MAX_DIM: usize = 4;
const MAX_CORNERS: usize = 1 << MAX_DIM;

#[derive(Clone, Debug)]
struct Cell {
    nodes: [usize; MAX_CORNERS],
    inv_width: [f64; MAX_DIM],
    /// Hat-weighted density integrals, one per corner.
    weights: [f64; MAX_CORNERS],
    center: Vector,
    /// `g^{-1}` at the center, row-major, when the model is Riemannian.
    dual_metric: Option<[f64; MAX_DIM * MAX_DIM]>,
    /// Largest eigenvalue of `g*` over sampled directions.
    dual_bound: f64,
}

/// A model, measure and grid bundled with the assembled cell data.
#[derive(Clone, Debug)]
pub struct WeakForm {
    model: FinslerModel,
    measure: WeightedMeasure,
    grid: Arc<Grid>,
    cells: Vec<Cell>,
    mass: Vec<f64>,
    total_mass: f64,
}

/// Energy and its gradient in one sweep.
pub struct EnergyGradient {
    pub energy: f64,
    pub gradient: Vec<f64>,
}

impl WeakForm {
    pub fn new(model: &FinslerModel, measure: &WeightedMeasure, grid: Arc<Grid>) -> Result<Self> {
        let d = grid.dim();
        if d != model.dim() {
            return Err(Error::invalid("grid and model dimensions differ"));
        }
        if d > MAX_DIM {
            return Err(Error::invalid(format!(
                "at most {MAX_DIM} grid dimensions are supported"
            )));
        }
        let corners = 1usize << d;
        let counts: Vec<usize> = grid.axes().iter().map(|a| a.cell_count()).collect();
        let total: usize = counts.iter().product();
        let dirs = unit_directions(d, 24);
        let mut cells = Vec::with_capacity(total);
        for c in 0..total {
            let mut rem = c;
            let mut lower = vec![0usize; d];
            for a in (0..d).rev() {
                lower[a] = rem % counts[a];
                rem /= counts[a];
            }
            let mut inv_width = [0.0; MAX_DIM];
            let mut center = Vector::zeros(d);
            let mut vol = 1.0;
            let mut upper = vec![0usize; d];
            for a in 0..d {
                let ax = grid.axis(a);
                upper[a] = ax.next(lower[a]).expect("cell has an upper node");
                let h = ax.spacing();
                inv_width[a] = 1.0 / h;
                center[a] = ax.coords()[lower[a]] + 0.5 * h;
                vol *= h;
            }
            let mut nodes = [0usize; MAX_CORNERS];
            for (b, slot) in nodes.iter_mut().enumerate().take(corners) {
                let idx: Vec<usize> = (0..d)
                    .map(|a| if b >> a & 1 == 1 { upper[a] } else { lower[a] })
                    .collect();
                *slot = grid.flat(&idx);
            }
            let dual_metric = model.riemannian_metric(&center).map(|g| {
                let inv = g.try_inverse().expect("metric is invertible");
                let mut out = [0.0; MAX_DIM * MAX_DIM];
                for i in 0..d {
                    for j in 0..d {
                        out[i * d + j] = inv[(i, j)];
                    }
                }
                out
            });
            let dual_bound = match &dual_metric {
                Some(m) => {
                    let inv = Matrix::from_row_slice(d, d, &m[..d * d]);
                    nalgebra::SymmetricEigen::new(inv).eigenvalues.max()
                }
                None => {
                    let mut worst: f64 = 0.0;
                    for v in &dirs {
                        let g = model.g(&center, v);
                        let lo = nalgebra::SymmetricEigen::new(g).eigenvalues.min();
                        if lo <= 0.0 {
                            return Err(Error::degenerate("fundamental tensor lost definiteness"));
                        }
                        worst = worst.max(1.0 / lo);
                    }
                    // Sampling can miss the extreme direction slightly.
                    1.25 * worst
                }
            };
            let weights = corner_weights(measure, &center, &inv_width[..d], vol);
            cells.push(Cell {
                nodes,
                inv_width,
                weights,
                center,
                dual_metric,
                dual_bound,
            });
        }
        let mut mass = vec![0.0; grid.len()];
        for cell in &cells {
            for b in 0..corners {
                mass[cell.nodes[b]] += cell.weights[b];
            }
        }
        let total_mass = mass.iter().sum();
        Ok(Self {
            model: model.clone(),
            measure: measure.clone(),
            grid,
            cells,
            mass,
            total_mass,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn model(&self) -> &FinslerModel {
        &self.model
    }

    pub fn measure(&self) -> &WeightedMeasure {
        &self.measure
    }

    /// Nodal masses: the density integrated against each node's hat.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    fn check(&self, u: &DiscreteField) -> Result<()> {
        if u.grid().as_ref() != self.grid.as_ref() {
            return Err(Error::invalid("field lives on a different grid"));
        }
        Ok(())
    }

    fn corner_differential(&self, cell: &Cell, b: usize, u: &[f64], out: &mut [f64; MAX_DIM]) {
        let d = self.grid.dim();
        for (a, slot) in out.iter_mut().enumerate().take(d) {
            let lo = cell.nodes[b & !(1 << a)];
            let hi = cell.nodes[b | (1 << a)];
            *slot = (u[hi] - u[lo]) * cell.inv_width[a];
        }
    }

    /// Legendre image of the corner differential.
    fn corner_gradient(&self, cell: &Cell, p: &[f64; MAX_DIM], out: &mut [f64; MAX_DIM], c: usize) -> Result<()> {
        let d = self.grid.dim();
        if let Some(m) = &cell.dual_metric {
            for i in 0..d {
                out[i] = (0..d).map(|j| m[i * d + j] * p[j]).sum();
            }
            return Ok(());
        }
        let alpha = Vector::from_column_slice(&p[..d]);
        let v = self.model.legendre(&cell.center, &alpha).map_err(|e| Error::AtNode {
            node: self.cells[c].nodes[0],
            source: Box::new(e),
        })?;
        out[..d].copy_from_slice(v.as_slice());
        Ok(())
    }

    fn corner_gradients(&self, u: &[f64]) -> Result<Vec<[f64; MAX_DIM]>> {
        let corners = 1usize << self.grid.dim();
        let eval = |c: usize| -> Result<[[f64; MAX_DIM]; MAX_CORNERS]> {
            let cell = &self.cells[c];
            let mut out = [[0.0; MAX_DIM]; MAX_CORNERS];
            let mut p = [0.0; MAX_DIM];
            for (b, slot) in out.iter_mut().enumerate().take(corners) {
                self.corner_differential(cell, b, u, &mut p);
                if p.iter().any(|x| *x != 0.0) {
                    self.corner_gradient(cell, &p, slot, c)?;
                }
            }
            Ok(out)
        };
        let per_cell: Vec<[[f64; MAX_DIM]; MAX_CORNERS]> = if self.cells[0].dual_metric.is_some() {
            (0..self.cells.len()).map(eval).collect::<Result<_>>()?
        } else {
            (0..self.cells.len()).into_par_iter().map(eval).collect::<Result<_>>()?
        };
        Ok(per_cell.into_iter().flat_map(|c| c.into_iter().take(corners)).collect())
    }

    /// `E(u)` together with `grad E(u)`.
    pub fn energy_gradient(&self, u: &DiscreteField) -> Result<EnergyGradient> {
        self.check(u)?;
        let d = self.grid.dim();
        let corners = 1usize << d;
        let vals = u.values();
        let grads = self.corner_gradients(vals)?;
        let mut gradient = vec![0.0; self.grid.len()];
        let mut energy = 0.0;
        let mut p = [0.0; MAX_DIM];
        for (c, cell) in self.cells.iter().enumerate() {
            for b in 0..corners {
                let v = &grads[c * corners + b];
                self.corner_differential(cell, b, vals, &mut p);
                let pairing: f64 = (0..d).map(|a| p[a] * v[a]).sum();
                let w = cell.weights[b];
                energy += 0.5 * w * pairing;
                for a in 0..d {
                    let lo = cell.nodes[b & !(1 << a)];
                    let hi = cell.nodes[b | (1 << a)];
                    let flux = w * v[a] * cell.inv_width[a];
                    gradient[hi] += flux;
                    gradient[lo] -= flux;
                }
            }
        }
        Ok(EnergyGradient { energy, gradient })
    }

    /// `1/2 int F*(du)^2 dm` in the cell quadrature.
    pub fn energy(&self, u: &DiscreteField) -> Result<f64> {
        Ok(self.energy_gradient(u)?.energy)
    }

    /// `-grad E / M`, zero where the nodal mass underflows.
    pub fn laplacian_from(&self, gradient: &[f64]) -> Vec<f64> {
        gradient
            .iter()
            .zip(&self.mass)
            .map(|(g, m)| if *m > 0.0 { -g / m } else { 0.0 })
            .collect()
    }

    pub fn laplacian(&self, u: &DiscreteField) -> Result<DiscreteField> {
        let eg = self.energy_gradient(u)?;
        DiscreteField::new(self.grid.clone(), self.laplacian_from(&eg.gradient))
    }

    /// `sum_cells sum_corners w dphi(nabla u)`, the right-hand side of the
    /// discrete weak identity.
    pub fn weak_pairing(&self, phi: &DiscreteField, u: &DiscreteField) -> Result<f64> {
        self.check(phi)?;
        self.check(u)?;
        let d = self.grid.dim();
        let corners = 1usize << d;
        let grads = self.corner_gradients(u.values())?;
        let mut p = [0.0; MAX_DIM];
        let mut total = 0.0;
        for (c, cell) in self.cells.iter().enumerate() {
            for b in 0..corners {
                self.corner_differential(cell, b, phi.values(), &mut p);
                let v = &grads[c * corners + b];
                total += cell.weights[b] * (0..d).map(|a| p[a] * v[a]).sum::<f64>();
            }
        }
        Ok(total)
    }

    /// Per-corner `(cell, weight, F*(du)^2)` triples.
    pub fn corner_dual_sq(&self, u: &DiscreteField) -> Result<Vec<(usize, f64, f64)>> {
        self.check(u)?;
        let d = self.grid.dim();
        let corners = 1usize << d;
        let grads = self.corner_gradients(u.values())?;
        let mut p = [0.0; MAX_DIM];
        let mut out = Vec::with_capacity(self.cells.len() * corners);
        for (c, cell) in self.cells.iter().enumerate() {
            for b in 0..corners {
                self.corner_differential(cell, b, u.values(), &mut p);
                let v = &grads[c * corners + b];
                out.push((c, cell.weights[b], (0..d).map(|a| p[a] * v[a]).sum::<f64>()));
            }
        }
        Ok(out)
    }

    pub fn cell_nodes(&self, c: usize) -> &[usize] {
        &self.cells[c].nodes[..1 << self.grid.dim()]
    }

    /// Largest stable explicit step, from a Gershgorin bound on `M^{-1} S`
    /// with the stiffness scaled by the largest eigenvalue of `g*`.
    pub fn stability_bound(&self) -> f64 {
        let d = self.grid.dim();
        let corners = 1usize << d;
        let mut rows = vec![0.0; self.grid.len()];
        for cell in &self.cells {
            // Each edge is shared by two corners; every endpoint picks up
            // |+1| + |-1| per corner use.
            let edge: f64 = (0..d).map(|a| 4.0 * cell.inv_width[a] * cell.inv_width[a]).sum();
            let heaviest = cell.weights[..corners].iter().cloned().fold(0.0, f64::max);
            let add = cell.dual_bound * heaviest * edge;
            for &n in &cell.nodes[..corners] {
                rows[n] += add;
            }
        }
        let worst = rows
            .iter()
            .zip(&self.mass)
            .filter(|(_, m)| **m > 0.0)
            .map(|(r, m)| r / m)
            .fold(0.0, f64::max);
        2.0 / worst
    }

    pub fn heat_step(&self, u: &DiscreteField, tau: f64) -> Result<DiscreteField> {
        let bound = self.stability_bound();
        if !(tau > 0.0 && tau <= bound) {
            return Err(Error::invalid(format!(
                "step {tau:.3e} outside the stable range (0, {bound:.3e}]"
            )));
        }
        let lap = self.laplacian(u)?;
        Ok(u.axpy(tau, &lap))
    }

    /// `M`-mean of a field.
    pub fn mean(&self, u: &DiscreteField) -> f64 {
        u.values().iter().zip(&self.mass).map(|(v, m)| v * m).sum::<f64>() / self.total_mass
    }

    pub fn variance(&self, u: &DiscreteField) -> f64 {
        let mean = self.mean(u);
        u.values()
            .iter()
            .zip(&self.mass)
            .map(|(v, m)| m * (v - mean) * (v - mean))
            .sum::<f64>()
            / self.total_mass
    }

    /// Weighted inner product `sum M u v`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter().zip(v).zip(&self.mass).map(|((a, b), m)| a * b * m).sum()
    }
}

/// Three-point Gauss-Legendre rule on `[0, 1]`.
const GAUSS_NODES: [f64; 3] = [0.112_701_665_379_258_31, 0.5, 0.887_298_334_620_741_7];
const GAUSS_WEIGHTS: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];

fn corner_weights(measure: &WeightedMeasure, center: &Vector, inv_width: &[f64], vol: f64) -> [f64; MAX_CORNERS] {
    let d = inv_width.len();
    let corners = 1usize << d;
    let mut out = [0.0; MAX_CORNERS];
    let mut x = center.clone();
    for q in 0..3usize.pow(d as u32) {
        let mut rem = q;
        let mut local = [0.0; MAX_DIM];
        let mut wq = vol;
        for a in 0..d {
            let k = rem % 3;
            rem /= 3;
            local[a] = GAUSS_NODES[k];
            wq *= GAUSS_WEIGHTS[k];
            x[a] = center[a] + (local[a] - 0.5) / inv_width[a];
        }
        let rho = wq * measure.density(&x);
        for (b, slot) in out.iter_mut().enumerate().take(corners) {
            let hat: f64 = (0..d)
                .map(|a| if b >> a & 1 == 1 { local[a] } else { 1.0 - local[a] })
                .product();
            *slot += rho * hat;
        }
    }
    out
}

/// Nodal gradient field: central differences (second-order one-sided at
/// interval ends), then the Legendre transform; zero where `du = 0`.
pub fn gradient_field(model: &FinslerModel, grid: &Grid, u: &DiscreteField) -> Result<Vec<Vector>> {
    let d = grid.dim();
    let vals = u.values();
    (0..grid.len())
        .map(|i| {
            let mut du = Vector::zeros(d);
            for a in 0..d {
                let ax = grid.axis(a);
                let h = ax.spacing();
                let k = grid.component(i, a);
                let at = |j: usize| vals[grid.with_component(i, a, j)];
                du[a] = match (ax.prev(k), ax.next(k)) {
                    (Some(p), Some(n)) => (at(n) - at(p)) / (2.0 * h),
                    (None, Some(n)) => (-3.0 * at(k) + 4.0 * at(n) - at(n + 1)) / (2.0 * h),
                    (Some(p), None) => (3.0 * at(k) - 4.0 * at(p) + at(p - 1)) / (2.0 * h),
                    (None, None) => 0.0,
                };
            }
            let x = grid.point(i);
            model.legendre(&x, &du).map_err(|e| Error::AtNode {
                node: i,
                source: Box::new(e),
            })
        })
        .collect()
}
