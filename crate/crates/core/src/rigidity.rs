//! Product models `Sigma x R` that attain the sharp spectral gap, and the
//! diagnostics that an equality case must pass: vanishing Hessian of the
//! eigenfunction, constant gradient norm, saturated curvature, a Gaussian
//! log-density along gradient lines, and the block structure of the
//! connection on Berwald products.
//!
//! The cross factor is a flat circle or a flat reversible Minkowski torus
//! with uniform measure; the line factor carries `N(0, 1/K)` truncated at
//! `8 / sqrt(K)`. The last coordinate is always the line.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{ScalarField, Vector};
use crate::geometry::{
    berwald_test, connection, distance, flow, gradient_vector, weighted_ricci, DistanceOptions, Geodesic,
    HessianAtPoint,
};
use crate::inequalities::{
    gaussian_profile, gaussian_quantile, isoperimetric_deficit, log_sobolev_deficit, poincare_deficit, ContentSchedule,
};
use crate::measure::WeightedMeasure;
use crate::needles::{
    classify_equality_needle, needle_balance, needle_isoperimetric_minimum, needle_logsobolev_deficit,
    verify_disintegration, BoundaryShape, NeedleDecomposition,
};
use crate::norms::{unit_directions, DomainBox, FinslerModel, ModelKind, QuarticNorm};
use crate::spectral::{gradient_field, Axis, DiscreteField, Grid, GridInterpolant, Topology, WeakForm};

/// Truncation of the line factor in units of the Gaussian standard deviation.
const LINE_RADIUS_SIGMAS: f64 = 8.0;

/// Nodes whose density is below this fraction of the peak are left out of
/// the pointwise diagnostics.
const SAMPLE_DENSITY_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CrossSection {
    /// Euclidean circle of the given circumference.
    Circle { length: f64 },
    /// Square flat torus with the quartic Minkowski norm of the given weight.
    MinkowskiTorus { length: f64, weight: f64 },
}

impl CrossSection {
    pub fn dim(&self) -> usize {
        match self {
            CrossSection::Circle { .. } => 1,
            CrossSection::MinkowskiTorus { .. } => 2,
        }
    }

    pub fn length(&self) -> f64 {
        match *self {
            CrossSection::Circle { length } | CrossSection::MinkowskiTorus { length, .. } => length,
        }
    }

    fn domain(&self) -> DomainBox {
        let d = self.dim();
        let l = self.length();
        (0..d).fold(DomainBox::new(vec![0.0; d], vec![l; d]), |b, a| b.with_periodic(a))
    }

    /// The factor as a model on its own periodic chart.
    pub fn model(&self) -> Result<FinslerModel> {
        match *self {
            CrossSection::Circle { length } => {
                if !(length.is_finite() && length > 0.0) {
                    return Err(Error::invalid("circumference must be positive"));
                }
                Ok(FinslerModel::euclidean(1).with_domain(self.domain()))
            }
            CrossSection::MinkowskiTorus { length, weight } => {
                if !(length.is_finite() && length > 0.0) {
                    return Err(Error::invalid("torus side must be positive"));
                }
                if !(0.0..1.0 / 3.0).contains(&weight) {
                    return Err(Error::invalid("quartic weight must lie in [0, 1/3)"));
                }
                Ok(FinslerModel::minkowski(
                    Arc::new(QuarticNorm { dim: 2, weight }),
                    self.domain(),
                ))
            }
        }
    }

    /// Lower bound for the first nonzero eigenvalue of the factor with
    /// uniform measure: `(2 pi / L)^2` times the smallest squared dual norm
    /// of a unit covector. Exact for the circle.
    pub fn spectral_gap(&self) -> Result<f64> {
        let base = (2.0 * std::f64::consts::PI / self.length()).powi(2);
        match self {
            CrossSection::Circle { .. } => Ok(base),
            CrossSection::MinkowskiTorus { .. } => {
                let model = self.model()?;
                let x = Vector::zeros(2);
                let mut least = f64::INFINITY;
                for xi in unit_directions(2, 720) {
                    least = least.min(model.dual_norm(&x, &xi)?);
                }
                Ok(base * least * least)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpec {
    /// Nodes per cross-section axis.
    pub cross_nodes: usize,
    /// Nodes on the line, including both ends.
    pub line_nodes: usize,
}

/// `Sigma x R` with measure `m_Sigma (x) gamma_K`, together with its grid.
#[derive(Clone, Debug)]
pub struct ProductModel {
    pub cross: CrossSection,
    pub curvature: f64,
    /// Half-width of the line chart.
    pub radius: f64,
    pub model: FinslerModel,
    pub measure: WeightedMeasure,
    pub grid: Arc<Grid>,
}

/// Product of a flat cross-section with the Gaussian line.
///
/// Rejects `K` at or above the cross-section gap: the first eigenfunction
/// would then live on the cross-section instead of the line.
pub fn build_product_model(cross: CrossSection, k: f64, spec: GridSpec) -> Result<ProductModel> {
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::invalid("curvature must be positive and finite"));
    }
    if spec.cross_nodes < 4 || spec.line_nodes < 5 {
        return Err(Error::invalid("grid too coarse"));
    }
    let gap = cross.spectral_gap()?;
    if gap <= k {
        return Err(Error::invalid(format!(
            "cross-section gap {gap:.6} does not exceed K = {k}"
        )));
    }
    let radius = LINE_RADIUS_SIGMAS / k.sqrt();
    let sigma = cross.model()?;
    let line = FinslerModel::euclidean(1).with_domain(DomainBox::new(vec![-radius], vec![radius]));
    let model = FinslerModel::product(sigma, line);
    let d = cross.dim();
    let mut axes: Vec<Axis> = (0..d)
        .map(|_| Axis::periodic(0.0, cross.length(), spec.cross_nodes))
        .collect();
    axes.push(Axis::interval(-radius, radius, spec.line_nodes));
    let grid = Arc::new(Grid::new(axes));
    let measure = WeightedMeasure::gaussian(model.domain().clone(), k, vec![d]).normalized_on(&grid);
    Ok(ProductModel {
        cross,
        curvature: k,
        radius,
        model,
        measure,
        grid,
    })
}

impl ProductModel {
    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn line_axis(&self) -> usize {
        self.dim() - 1
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            cross_nodes: self.grid.axis(0).len(),
            line_nodes: self.grid.axis(self.line_axis()).len(),
        }
    }

    /// `sqrt(K) t`: zero mean and unit variance under `gamma_K`.
    pub fn candidate(&self) -> DiscreteField {
        let (a, s) = (self.line_axis(), self.curvature.sqrt());
        DiscreteField::from_fn(self.grid.clone(), |x| s * x[a])
    }

    /// The line coordinate itself, the unit-speed guiding function.
    pub fn line_coordinate(&self) -> DiscreteField {
        let a = self.line_axis();
        DiscreteField::from_fn(self.grid.clone(), |x| x[a])
    }

    /// The same model on a grid with halved spacing.
    pub fn refined(&self) -> Result<Self> {
        let s = self.spec();
        self.with_grid(GridSpec {
            cross_nodes: 2 * s.cross_nodes,
            line_nodes: 2 * s.line_nodes - 1,
        })
    }

    pub fn with_grid(&self, spec: GridSpec) -> Result<Self> {
        build_product_model(self.cross, self.curvature, spec)
    }

    pub fn weak_form(&self) -> Result<WeakForm> {
        WeakForm::new(&self.model, &self.measure, self.grid.clone())
    }

    /// Translation by `delta` along the line, the flow of the unit gradient
    /// of the line coordinate.
    pub fn translate(&self, x: &Vector, delta: f64) -> Vector {
        let mut y = x.clone();
        y[self.line_axis()] += delta;
        y
    }

    pub fn decomposition(&self) -> Result<NeedleDecomposition> {
        NeedleDecomposition::along_last_axis(&self.model, &self.measure, self.grid.clone())
    }
}

/// Residuals of the splitting conditions for an approximate eigenfield.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitReport {
    /// Largest Hilbert-Schmidt norm of the Hessian over the sampled nodes.
    pub hessian_max: f64,
    /// Mass-weighted standard deviation of `F(grad u)` over the sampled nodes.
    pub gradnorm_std: f64,
    /// Largest `|Ric_inf(grad u) - K F(grad u)^2|`.
    pub ricci_gap: f64,
    /// Largest `|dPsi(grad u) - K u|`.
    pub psi_residual: f64,
    /// Largest `|(Psi o sigma)'' - K|` along unit-speed gradient curves.
    pub gaussian_fit: f64,
    /// `int F^2(grad [F(grad u)]) dm`, with the gradient taken in `g_{grad u}`.
    pub technical_norm: f64,
    pub samples: usize,
}

impl SplitReport {
    /// The five residuals that vanish on an exact splitting.
    pub fn residuals(&self) -> [(&'static str, f64); 5] {
        [
            ("hessian_max", self.hessian_max),
            ("gradnorm_std", self.gradnorm_std),
            ("ricci_gap", self.ricci_gap),
            ("psi_residual", self.psi_residual),
            ("gaussian_fit", self.gaussian_fit),
        ]
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals().iter().map(|r| r.1).fold(0.0, f64::max)
    }
}

/// Nodal derivative along `axis`: central, or second-order one-sided at
/// interval ends.
fn nodal_derivative(grid: &Grid, i: usize, axis: usize, value: &dyn Fn(usize) -> f64) -> f64 {
    let ax = grid.axis(axis);
    let h = ax.spacing();
    let k = grid.component(i, axis);
    let at = |j: usize| value(grid.with_component(i, axis, j));
    match (ax.prev(k), ax.next(k)) {
        (Some(p), Some(n)) => (at(n) - at(p)) / (2.0 * h),
        (None, Some(n)) => (-3.0 * at(k) + 4.0 * at(n) - at(n + 1)) / (2.0 * h),
        (Some(p), None) => (3.0 * at(k) - 4.0 * at(p) + at(p - 1)) / (2.0 * h),
        (None, None) => 0.0,
    }
}

fn is_interior(grid: &Grid, i: usize) -> bool {
    (0..grid.dim()).all(|a| {
        let ax = grid.axis(a);
        let k = grid.component(i, a);
        ax.topology() == Topology::Periodic || (ax.prev(k).is_some() && ax.next(k).is_some())
    })
}

/// Splitting residuals of `u` on its own grid.
///
/// Gradients, Hessians and `dPsi` come from nodal differences of the grid
/// data, so the report measures the discrete field and not an interpolant.
/// The Gaussian fit integrates the unit field `grad u / F(grad u)` by RK4
/// through interpolated gradients from a few central nodes over `s` in
/// `[-2, 2]`.
pub fn splitting_check(
    model: &FinslerModel,
    measure: &WeightedMeasure,
    u: &DiscreteField,
    k: f64,
) -> Result<SplitReport> {
    let grid = u.grid().clone();
    let d = grid.dim();
    if model.dim() != d {
        return Err(Error::invalid("model and grid dimensions differ"));
    }
    let grads = gradient_field(model, &grid, u)?;
    let points: Vec<Vector> = (0..grid.len()).map(|i| grid.point(i)).collect();
    let density: Vec<f64> = points.iter().map(|x| measure.density(x)).collect();
    let speed: Vec<f64> = points.iter().zip(&grads).map(|(x, v)| model.f(x, v)).collect();
    let peak_density = density.iter().copied().fold(0.0, f64::max);
    let peak_speed = speed.iter().copied().fold(0.0, f64::max);
    let sample: Vec<usize> = (0..grid.len())
        .filter(|&i| {
            is_interior(&grid, i) && density[i] >= SAMPLE_DENSITY_FLOOR * peak_density && speed[i] > 1e-8 * peak_speed
        })
        .collect();
    if sample.is_empty() {
        return Err(Error::invalid("no sampled node lies in the essential domain"));
    }

    let hessians: Vec<f64> = sample
        .par_iter()
        .map(|&i| -> Result<f64> {
            let mut jac = crate::field::Matrix::zeros(d, d);
            for a in 0..d {
                for c in 0..d {
                    jac[(c, a)] = nodal_derivative(&grid, i, a, &|j| grads[j][c]);
                }
            }
            let gamma = connection(model, &points[i], &grads[i])?;
            for c in 0..d {
                let row = &gamma.coeffs[c] * &grads[i];
                for a in 0..d {
                    jac[(c, a)] += row[a];
                }
            }
            let h = HessianAtPoint {
                base: points[i].clone(),
                gradient: grads[i].clone(),
                matrix: jac,
                metric: model.g(&points[i], &grads[i]),
            };
            Ok(h.hs_norm_sq().max(0.0).sqrt())
        })
        .collect::<Result<_>>()?;
    let hessian_max = hessians.iter().copied().fold(0.0, f64::max);

    let weight: Vec<f64> = sample.iter().map(|&i| grid.weight(i) * density[i]).collect();
    let total: f64 = weight.iter().sum();
    let mean: f64 = sample.iter().zip(&weight).map(|(&i, w)| w * speed[i]).sum::<f64>() / total;
    let var: f64 = sample
        .iter()
        .zip(&weight)
        .map(|(&i, w)| w * (speed[i] - mean).powi(2))
        .sum::<f64>()
        / total;
    let gradnorm_std = var.max(0.0).sqrt();

    let stride = (sample.len() / 64).max(1);
    let ricci: Vec<f64> = sample
        .par_iter()
        .step_by(stride)
        .map(|&i| -> Result<f64> {
            let ric = weighted_ricci(model, measure, &points[i], &grads[i], f64::INFINITY)?;
            Ok((ric - k * speed[i] * speed[i]).abs())
        })
        .collect::<Result<_>>()?;
    let ricci_gap = ricci.iter().copied().fold(0.0, f64::max);

    let psi_at = |j: usize, reference: &Vector| -> f64 {
        let v = if speed[j] > 0.0 { &grads[j] } else { reference };
        measure.psi_with_volume(model, &points[j], v)
    };
    let psi_residual = sample
        .iter()
        .map(|&i| {
            let dpsi: f64 = (0..d)
                .map(|a| nodal_derivative(&grid, i, a, &|j| psi_at(j, &grads[i])) * grads[i][a])
                .sum();
            (dpsi - k * u.values()[i]).abs()
        })
        .fold(0.0, f64::max);

    let gaussian_fit = gaussian_fit(model, measure, &grid, &grads, &sample, &density, k)?;

    let technical_norm = (0..grid.len())
        .filter(|&i| speed[i] > 1e-8 * peak_speed)
        .map(|i| {
            let df = Vector::from_fn(d, |a, _| nodal_derivative(&grid, i, a, &|j| speed[j]));
            if df.amax() == 0.0 {
                return 0.0;
            }
            let g = model.g(&points[i], &grads[i]);
            let w = g.cholesky().map(|c| c.solve(&df)).unwrap_or_else(|| df.clone());
            grid.weight(i) * density[i] * model.f(&points[i], &w).powi(2)
        })
        .sum::<f64>();

    Ok(SplitReport {
        hessian_max,
        gradnorm_std,
        ricci_gap,
        psi_residual,
        gaussian_fit,
        technical_norm,
        samples: sample.len(),
    })
}

const FIT_STEP: f64 = 0.05;
const FIT_HALF_STEPS: usize = 40;
const FIT_STARTS: usize = 4;

fn gaussian_fit(
    model: &FinslerModel,
    measure: &WeightedMeasure,
    grid: &Arc<Grid>,
    grads: &[Vector],
    sample: &[usize],
    density: &[f64],
    k: f64,
) -> Result<f64> {
    let d = grid.dim();
    let components: Vec<GridInterpolant> = (0..d)
        .map(|a| {
            let vals = grads.iter().map(|v| v[a]).collect();
            DiscreteField::new(grid.clone(), vals).map(GridInterpolant::new)
        })
        .collect::<Result<_>>()?;
    let gradient = |x: &Vector| Vector::from_fn(d, |a, _| components[a].value(x));
    let inside = |x: &Vector| {
        (0..d).all(|a| {
            let ax = grid.axis(a);
            ax.topology() == Topology::Periodic
                || (x[a] >= ax.coords()[0] && x[a] <= *ax.coords().last().expect("nonempty axis"))
        })
    };
    let unit = |x: &Vector| -> Result<Vector> {
        if !inside(x) {
            return Err(Error::invalid("gradient curve left the grid"));
        }
        let v = gradient(x);
        let f = model.f(x, &v);
        if !(f > 0.0) {
            return Err(Error::invalid("gradient curve reached a critical point"));
        }
        Ok(v / f)
    };
    let psi = |x: &Vector| -> Result<f64> {
        let v = gradient(x);
        Ok(measure.psi_with_volume(model, x, &v))
    };
    let mut starts: Vec<usize> = sample.to_vec();
    starts.sort_by(|a, b| density[*b].total_cmp(&density[*a]).then(a.cmp(b)));
    starts.truncate(FIT_STARTS);
    let mut worst: f64 = 0.0;
    for s in starts {
        let x0 = grid.point(s);
        let mut halves = Vec::with_capacity(2);
        for dir in [1.0, -1.0] {
            let mut x = x0.clone();
            let h = dir * FIT_STEP;
            let mut half = Vec::with_capacity(FIT_HALF_STEPS);
            for _ in 0..FIT_HALF_STEPS {
                let k1 = unit(&x)?;
                let k2 = unit(&(&x + &k1 * (0.5 * h)))?;
                let k3 = unit(&(&x + &k2 * (0.5 * h)))?;
                let k4 = unit(&(&x + &k3 * h))?;
                x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
                half.push(x.clone());
            }
            halves.push(half);
        }
        let backward = halves.pop().expect("two halves");
        let forward = halves.pop().expect("two halves");
        let curve: Vec<Vector> = backward.into_iter().rev().chain([x0]).chain(forward).collect();
        let values: Vec<f64> = curve.iter().map(&psi).collect::<Result<_>>()?;
        for w in values.windows(3) {
            let second = (w[0] - 2.0 * w[1] + w[2]) / (FIT_STEP * FIT_STEP);
            worst = worst.max((second - k).abs());
        }
    }
    Ok(worst)
}

/// Largest `|(u o xi)''|` over the interior samples of the geodesics, by
/// second differences in the geodesic parameter.
pub fn affine_check(model: &FinslerModel, u: &dyn ScalarField, geodesics: &[Geodesic]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for geo in geodesics {
        if geo.len() < 3 {
            return Err(Error::invalid("a geodesic needs at least three samples"));
        }
        if let Some(exit) = geo.points.iter().position(|x| !model.domain().contains(x)) {
            let keep = exit.max(1);
            return Err(Error::DomainExit {
                partial: Box::new(Geodesic {
                    times: geo.times[..keep].to_vec(),
                    points: geo.points[..keep].to_vec(),
                    velocities: geo.velocities[..keep].to_vec(),
                    speed: geo.speed,
                }),
            });
        }
        let values: Vec<f64> = geo.points.iter().map(|x| u.value(x)).collect();
        for i in 1..geo.len() - 1 {
            let dt0 = geo.times[i] - geo.times[i - 1];
            let dt1 = geo.times[i + 1] - geo.times[i];
            let second = 2.0 * ((values[i + 1] - values[i]) / dt1 - (values[i] - values[i - 1]) / dt0) / (dt0 + dt1);
            worst = worst.max(second.abs());
        }
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BerwaldSplit {
    /// Largest `|Gamma^i_jk(grad u)|` with at least one index on the line.
    pub gamma_block_residual: f64,
    /// Largest deviation of projected ambient geodesics from factor geodesics.
    pub geodesic_projection_residual: f64,
    /// Smallest sampled `Ric_inf` of the cross-section with uniform measure.
    pub cross_ricci_min: f64,
}

fn factors(model: &FinslerModel) -> Result<(&FinslerModel, &FinslerModel)> {
    match model.kind() {
        ModelKind::Product { first, second } if second.dim() == 1 => Ok((first, second)),
        _ => Err(Error::invalid("expected a product with a one-dimensional last factor")),
    }
}

const PROJECTION_TIME: f64 = 1.0;
const PROJECTION_STEPS: usize = 32;

/// Block structure of the connection and the projection property of
/// geodesics on a Berwald product `Sigma x R`.
pub fn berwald_split_check(model: &FinslerModel, u: &dyn ScalarField, sample: &[Vector]) -> Result<BerwaldSplit> {
    let (cross, line) = factors(model)?;
    let report = berwald_test(model, sample, 1e-6)?;
    if !report.is_berwald {
        return Err(Error::invalid(format!(
            "model is not Berwald (spray residual {:.3e})",
            report.max_residual
        )));
    }
    let n = model.dim();
    let last = n - 1;
    let mut gamma_block_residual: f64 = 0.0;
    for x in sample {
        let grad = gradient_vector(model, u, x)?;
        let gamma = connection(model, x, &grad)?;
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    if i == last || j == last || l == last {
                        gamma_block_residual = gamma_block_residual.max(gamma.coeffs[i][(j, l)].abs());
                    }
                }
            }
        }
    }

    let m = cross.dim();
    let directions = unit_directions(n, 6);
    let mut geodesic_projection_residual: f64 = 0.0;
    for x in sample {
        for v in &directions {
            let (x1, x2) = (x.rows(0, m).into_owned(), x.rows(m, 1).into_owned());
            let (v1, v2) = (v.rows(0, m).into_owned(), v.rows(m, 1).into_owned());
            let dt = PROJECTION_TIME / PROJECTION_STEPS as f64;
            let (mut y, mut w) = (x.clone(), v.clone());
            for step in 1..=PROJECTION_STEPS {
                let (yn, wn) = flow(model, &y, &w, dt, 1)?;
                y = yn;
                w = wn;
                let t = step as f64 * dt;
                let p1 = if v1.amax() == 0.0 {
                    x1.clone()
                } else {
                    flow(cross, &x1, &v1, t, step)?.0
                };
                let p2 = if v2.amax() == 0.0 {
                    x2.clone()
                } else {
                    flow(line, &x2, &v2, t, step)?.0
                };
                let dev = (y.rows(0, m) - p1).amax().max((y.rows(m, 1) - p2).amax());
                geodesic_projection_residual = geodesic_projection_residual.max(dev);
            }
        }
    }

    let uniform = WeightedMeasure::uniform(cross.domain().clone());
    let mut cross_ricci_min = f64::INFINITY;
    for x in sample {
        let x1 = x.rows(0, m).into_owned();
        for v in unit_directions(m, 4) {
            cross_ricci_min = cross_ricci_min.min(weighted_ricci(cross, &uniform, &x1, &v, f64::INFINITY)?);
        }
    }
    Ok(BerwaldSplit {
        gamma_block_residual,
        geodesic_projection_residual,
        cross_ricci_min,
    })
}

/// Largest spread over `heights` of `d((x, s), (y, s))` for the given
/// cross-section pairs. Zero when every translation along the line is an
/// isometry between slices.
pub fn factor_isometry_residual(model: &FinslerModel, pairs: &[(Vector, Vector)], heights: &[f64]) -> Result<f64> {
    let (cross, _) = factors(model)?;
    if heights.len() < 2 {
        return Err(Error::invalid("need at least two heights"));
    }
    let lift = |p: &Vector, s: f64| {
        let mut x = Vector::zeros(cross.dim() + 1);
        x.rows_mut(0, cross.dim()).copy_from(p);
        x[cross.dim()] = s;
        x
    };
    pairs
        .par_iter()
        .map(|(p, q)| -> Result<f64> {
            let ds: Vec<f64> = heights
                .iter()
                .map(|&s| distance(model, &lift(p, s), &lift(q, s), DistanceOptions::default()))
                .collect::<Result<_>>()?;
            let lo = ds.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(hi - lo)
        })
        .collect::<Result<Vec<f64>>>()
        .map(|v| v.into_iter().fold(0.0, f64::max))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Corollary {
    LogSobolev,
    /// Equality for the sublevel set `{t <= q}` of volume fraction `theta`.
    Isoperimetric {
        theta: f64,
    },
}

impl Corollary {
    pub fn name(&self) -> &'static str {
        match self {
            Corollary::LogSobolev => "log_sobolev",
            Corollary::Isoperimetric { .. } => "isoperimetric",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageOutcome {
    pub stage: &'static str,
    pub value: f64,
    pub tolerance: f64,
}

impl StageOutcome {
    pub fn passed(&self) -> bool {
        self.value.is_finite() && self.value <= self.tolerance
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorollaryReport {
    pub corollary: Corollary,
    pub stages: Vec<StageOutcome>,
}

impl CorollaryReport {
    pub fn passed(&self) -> bool {
        self.stages.iter().all(StageOutcome::passed)
    }
}

/// Nodes on the line for the ambient content stage of the isoperimetric run.
const CONTENT_LINE_NODES: usize = 1025;

/// Run every stage of the reduction from an ambient equality to a Poincare
/// equality and report all of them, passing or not.
pub fn corollary_stages(corollary: Corollary, pm: &ProductModel, k: f64, tol: f64) -> Result<CorollaryReport> {
    let reversibility = pm.model.reversibility_on(&[pm.grid.point(0)], 32)?;
    if (reversibility - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("the corollaries need a reversible model"));
    }
    let form = pm.weak_form()?;
    let dec = pm.decomposition()?;
    let line = pm.line_axis();
    let slope = guiding_slope(pm)?;
    let stage = |stage, value, tolerance| StageOutcome {
        stage,
        value,
        tolerance,
    };
    let sk = k.sqrt();
    let stages = match corollary {
        Corollary::LogSobolev => {
            let tilt = move |t: f64| (sk * t - 0.5).exp();
            let rho = DiscreteField::from_fn(pm.grid.clone(), |x| tilt(x[line]));
            let ambient = log_sobolev_deficit(&form, &rho, k)?;
            let split = verify_disintegration(&dec, |x| tilt(x[line]))?;
            let mut needle_gap: f64 = 0.0;
            let mut class_gap: f64 = 0.0;
            let mut all_gaussian = true;
            for needle in dec.needles() {
                needle_gap = needle_gap.max(needle_logsobolev_deficit(needle, tilt, k)?.deficit.abs());
                let class = classify_equality_needle(needle, k, tol);
                all_gaussian &= class.is_gaussian;
                class_gap = class_gap.max(class.max_deviation);
            }
            let log_rho = rho.map(f64::ln);
            let poincare = poincare_deficit(&form, &log_rho, k)?;
            vec![
                stage("ambient_equality", ambient.deficit.abs(), tol),
                stage("disintegration", split.error.max(slope), tol),
                stage("needle_equality", needle_gap, tol),
                stage(
                    "needle_classification",
                    if all_gaussian { class_gap } else { f64::INFINITY },
                    tol,
                ),
                stage("poincare_equality", poincare.deficit.abs(), tol),
            ]
        }
        Corollary::Isoperimetric { theta } => {
            let q = gaussian_quantile(k, theta)?;
            let fine = pm.with_grid(GridSpec {
                cross_nodes: pm.spec().cross_nodes,
                line_nodes: pm.spec().line_nodes.max(CONTENT_LINE_NODES),
            })?;
            let fine_form = fine.weak_form()?;
            let set: Vec<bool> = fine.grid.nodes().map(|(_, x)| x[line] <= q).collect();
            let ambient = isoperimetric_deficit(&fine_form, &set, k, &ContentSchedule::default())?;
            let split = verify_disintegration(&dec, |x| if x[line] <= q { 1.0 - theta } else { -theta })?;
            let balance = needle_balance(&dec, q, theta)?
                .into_iter()
                .map(f64::abs)
                .fold(0.0, f64::max);
            let profile = gaussian_profile(k, theta)?;
            let mut needle_gap: f64 = 0.0;
            let mut class_gap: f64 = 0.0;
            let mut all_gaussian = true;
            for needle in dec.needles() {
                let min = needle_isoperimetric_minimum(needle, theta, k)?;
                let shape_ok = min.shape != BoundaryShape::Interval;
                let gap = (min.content - profile).abs();
                needle_gap = needle_gap.max(if shape_ok { gap } else { f64::INFINITY });
                let class = classify_equality_needle(needle, k, tol);
                all_gaussian &= class.is_gaussian;
                class_gap = class_gap.max(class.max_deviation);
            }
            let poincare = poincare_deficit(&form, &pm.line_coordinate(), k)?;
            vec![
                stage("ambient_equality", ambient.deficit.abs(), tol),
                stage("disintegration", split.error.max(balance).max(slope), tol),
                stage("needle_equality", needle_gap, tol),
                stage(
                    "needle_classification",
                    if all_gaussian { class_gap } else { f64::INFINITY },
                    tol,
                ),
                stage("poincare_equality", poincare.deficit.abs(), tol),
            ]
        }
    };
    Ok(CorollaryReport { corollary, stages })
}

/// Like [`corollary_stages`], failing on the first stage above tolerance.
pub fn corollary_pipeline(corollary: Corollary, pm: &ProductModel, k: f64, tol: f64) -> Result<CorollaryReport> {
    let report = corollary_stages(corollary, pm, k, tol)?;
    if let Some(bad) = report.stages.iter().find(|s| !s.passed()) {
        return Err(Error::StageFailed {
            stage: bad.stage.to_string(),
            value: bad.value,
            tolerance: bad.tolerance,
        });
    }
    Ok(report)
}

/// `max |F(grad phi) - 1|` for the guiding function on a few ray points.
fn guiding_slope(pm: &ProductModel) -> Result<f64> {
    let line = pm.line_axis();
    let phi = move |x: &Vector| x[line];
    let mut worst: f64 = 0.0;
    let n = pm.grid.len();
    for i in [0, n / 3, n / 2, n - 1] {
        let x = pm.grid.point(i);
        let grad = gradient_vector(&pm.model, &phi, &x)?;
        worst = worst.max((pm.model.f(&x, &grad) - 1.0).abs());
    }
    Ok(worst)
}
