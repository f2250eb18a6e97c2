//! Poincare, log-Sobolev and isoperimetric functionals with their deficits,
//! the Gaussian isoperimetric profile and forward Minkowski content.
//!
//! Dirichlet energies come from a [`WeakForm`], so they are the same numbers
//! the spectral solver minimizes. Plain integrals of nodal values (means,
//! variances, entropies) use the trapezoidal rule of the grid, which is
//! spectrally accurate for the smooth rapidly decaying densities used here.

use std::f64::consts::{PI, SQRT_2};

use libm::erfc;
use petgraph::algo::dijkstra;
use petgraph::graph::{DiGraph, NodeIndex};

use crate::error::{Error, Result};
use crate::field::Vector;
use crate::measure::WeightedMeasure;
use crate::spectral::{DiscreteField, WeakForm};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Inequality {
    Poincare,
    LogSobolev,
    Isoperimetric,
}

impl Inequality {
    pub fn name(self) -> &'static str {
        match self {
            Inequality::Poincare => "poincare",
            Inequality::LogSobolev => "log_sobolev",
            Inequality::Isoperimetric => "isoperimetric",
        }
    }
}

/// Two sides of an inequality `lhs <= rhs`; `deficit = rhs - lhs`.
#[derive(Clone, Debug, PartialEq)]
pub struct DeficitReport {
    pub inequality: Inequality,
    pub lhs: f64,
    pub rhs: f64,
    pub deficit: f64,
    pub curvature: f64,
    /// Measure of the set, for isoperimetry.
    pub volume_fraction: Option<f64>,
    /// Mass the density had before renormalization, for log-Sobolev.
    pub normalization: Option<f64>,
}

impl DeficitReport {
    fn new(inequality: Inequality, lhs: f64, rhs: f64, curvature: f64) -> Self {
        Self {
            inequality,
            lhs,
            rhs,
            deficit: rhs - lhs,
            curvature,
            volume_fraction: None,
            normalization: None,
        }
    }
}

fn check_curvature(k: f64) -> Result<()> {
    if k > 0.0 && k.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("curvature bound must be positive, got {k}")))
    }
}

/// Trapezoidal masses `w_i e^{-psi(x_i)}` scaled to total one.
fn nodal_masses(measure: &WeightedMeasure, u: &DiscreteField) -> Vec<f64> {
    let grid = u.grid();
    let raw: Vec<f64> = grid
        .nodes()
        .map(|(i, x)| grid.weight(i) * measure.density(&x))
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|m| m / total).collect()
}

/// `int u^2 dm - (int u dm)^2` under the trapezoidal rule of the field's grid.
pub fn variance(measure: &WeightedMeasure, u: &DiscreteField) -> f64 {
    let m = nodal_masses(measure, u);
    let mean: f64 = u.values().iter().zip(&m).map(|(v, w)| v * w).sum();
    u.values()
        .iter()
        .zip(&m)
        .map(|(v, w)| w * (v - mean) * (v - mean))
        .sum()
}

/// `H(u) = (1/K) int F(grad u)^2 dm - Var(u)`.
pub fn poincare_deficit(form: &WeakForm, u: &DiscreteField, k: f64) -> Result<DeficitReport> {
    check_curvature(k)?;
    let dirichlet = 2.0 * form.energy(u)? / form.total_mass();
    Ok(DeficitReport::new(
        Inequality::Poincare,
        variance(form.measure(), u),
        dirichlet / k,
        k,
    ))
}

/// `x log x` with its removable zero and a cancellation-free branch near one.
fn entropy_density(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else if (x - 1.0).abs() < 0.5 {
        x * (x - 1.0).ln_1p()
    } else {
        x * x.ln()
    }
}

/// `(1/2K) int F(grad rho)^2 / rho dm - int rho log rho dm` after scaling
/// `rho` to unit mass.
///
/// The Fisher information uses `F(grad rho)^2 / rho = 4 F(grad sqrt(rho))^2`,
/// which is finite on the zero set and matches the regarded-as-zero
/// convention there.
pub fn log_sobolev_deficit(form: &WeakForm, rho: &DiscreteField, k: f64) -> Result<DeficitReport> {
    check_curvature(k)?;
    if let Some(bad) = rho.values().iter().find(|v| **v < -1e-12) {
        return Err(Error::invalid(format!("density takes the negative value {bad}")));
    }
    let clipped = rho.map(|v| v.max(0.0));
    let weights = nodal_masses(form.measure(), &clipped);
    let mass: f64 = clipped.values().iter().zip(&weights).map(|(v, w)| v * w).sum();
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::invalid("density has no mass"));
    }
    let density = clipped.scaled(1.0 / mass);
    let root = density.map(f64::sqrt);
    let fisher = 8.0 * form.energy(&root)? / form.total_mass();
    let entropy: f64 = density
        .values()
        .iter()
        .zip(&weights)
        .map(|(v, w)| w * entropy_density(*v))
        .sum();
    let mut report = DeficitReport::new(Inequality::LogSobolev, entropy, fisher / (2.0 * k), k);
    report.normalization = Some(mass);
    Ok(report)
}

fn standard_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

fn standard_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// `theta`-quantile of `N(0, 1/K)`: bisection to a small bracket, then Newton.
pub fn gaussian_quantile(k: f64, theta: f64) -> Result<f64> {
    check_curvature(k)?;
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::invalid(format!(
            "volume fraction must lie in (0, 1), got {theta}"
        )));
    }
    let (mut lo, mut hi) = (-40.0, 40.0);
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if standard_cdf(mid) < theta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut z = 0.5 * (lo + hi);
    for _ in 0..50 {
        let pdf = standard_pdf(z);
        if pdf == 0.0 {
            break;
        }
        let step = (standard_cdf(z) - theta) / pdf;
        z -= step;
        if step.abs() < 1e-14 * (1.0 + z.abs()) {
            break;
        }
    }
    Ok(z / k.sqrt())
}

/// Isoperimetric profile of the Gaussian space `N(0, 1/K)`.
pub fn gaussian_profile(k: f64, theta: f64) -> Result<f64> {
    let a = gaussian_quantile(k, theta)?;
    Ok((k / (2.0 * PI)).sqrt() * (-0.5 * k * a * a).exp())
}

/// Neighborhood radii for the content estimate, in multiples of the finest
/// grid spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentSchedule {
    pub multiples: [f64; 3],
}

impl Default for ContentSchedule {
    fn default() -> Self {
        Self {
            multiples: [4.0, 8.0, 16.0],
        }
    }
}

fn set_fraction(form: &WeakForm, set: &[bool]) -> Result<f64> {
    if set.len() != form.grid().len() {
        return Err(Error::invalid("set mask does not match the grid"));
    }
    let inside: f64 = set.iter().zip(form.mass()).filter(|(s, _)| **s).map(|(_, m)| m).sum();
    let theta = inside / form.total_mass();
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::invalid("set must have measure strictly between 0 and 1"));
    }
    Ok(theta)
}

/// Forward exterior Minkowski content of a node set.
///
/// A node stands for the cell of points closer to it than to any other
/// node. In one dimension the boundary of the set is then a list of faces
/// at node midpoints, and the content is the exact sum of
/// `density / F(outward direction)` over those faces. In higher dimensions
/// forward distances from the set are computed on the grid graph, and the
/// mass quotients `m(B+(A, eps) \ A) / eps` over the schedule are
/// extrapolated to `eps = 0` with a quadratic fit.
pub fn minkowski_content(form: &WeakForm, set: &[bool], schedule: &ContentSchedule) -> Result<f64> {
    set_fraction(form, set)?;
    let grid = form.grid();
    let model = form.model();
    let measure = form.measure();
    if grid.dim() == 1 {
        let ax = grid.axis(0);
        let h = ax.spacing();
        let mut total = 0.0;
        for i in (0..ax.len()).filter(|&i| set[i]) {
            let x = ax.coords()[i];
            if let Some(j) = ax.next(i) {
                if !set[j] {
                    let face = Vector::from_vec(vec![x + 0.5 * h]);
                    total += measure.density(&face) / model.norm(&face, &Vector::from_vec(vec![1.0]))?;
                }
            }
            if let Some(j) = ax.prev(i) {
                if !set[j] {
                    let face = Vector::from_vec(vec![x - 0.5 * h]);
                    total += measure.density(&face) / model.norm(&face, &Vector::from_vec(vec![-1.0]))?;
                }
            }
        }
        return Ok(total / form.total_mass());
    }
    let dist = forward_distances(form, set)?;
    let h = grid.min_spacing();
    let eps: Vec<f64> = schedule.multiples.iter().map(|m| m * h).collect();
    let quotients: Vec<f64> = eps
        .iter()
        .map(|&e| {
            let grown: f64 = dist
                .iter()
                .zip(form.mass())
                .zip(set)
                .filter(|((d, _), s)| !**s && **d <= e * (1.0 + 1e-9))
                .map(|((_, m), _)| m)
                .sum();
            grown / form.total_mass() / e
        })
        .collect();
    Ok(lagrange_at_zero(&eps, &quotients))
}

/// Value at zero of the parabola through three points.
fn lagrange_at_zero(x: &[f64], y: &[f64]) -> f64 {
    (0..3)
        .map(|j| {
            let w: f64 = (0..3).filter(|&m| m != j).map(|m| x[m] / (x[m] - x[j])).product();
            w * y[j]
        })
        .sum()
}

/// Forward distance from the set to every node along grid-graph paths with
/// edges to all `3^d - 1` neighbours, each weighted by `F` at its midpoint.
fn forward_distances(form: &WeakForm, set: &[bool]) -> Result<Vec<f64>> {
    let grid = form.grid();
    let model = form.model();
    let d = grid.dim();
    let n = grid.len();
    let mut graph: DiGraph<(), f64> = DiGraph::with_capacity(n + 1, n * (3usize.pow(d as u32) - 1));
    let nodes: Vec<NodeIndex> = (0..n).map(|_| graph.add_node(())).collect();
    let source = graph.add_node(());
    for (i, x) in grid.nodes() {
        if set[i] {
            graph.add_edge(source, nodes[i], 0.0);
        }
        for offset in 0..3usize.pow(d as u32) {
            let mut rem = offset;
            let mut target = i;
            let mut step = Vector::zeros(d);
            let mut valid = true;
            for a in 0..d {
                let o = rem % 3;
                rem /= 3;
                let ax = grid.axis(a);
                let k = grid.component(target, a);
                let moved = match o {
                    0 => Some(k),
                    1 => ax.next(k),
                    _ => ax.prev(k),
                };
                match moved {
                    Some(m) => target = grid.with_component(target, a, m),
                    None => valid = false,
                }
                step[a] = match o {
                    0 => 0.0,
                    1 => ax.spacing(),
                    _ => -ax.spacing(),
                };
            }
            if !valid || target == i {
                continue;
            }
            let mid = &x + &step * 0.5;
            graph.add_edge(nodes[i], nodes[target], model.norm(&mid, &step)?);
        }
    }
    let reached = dijkstra(&graph, source, None, |e| *e.weight());
    Ok(nodes
        .iter()
        .map(|ni| reached.get(ni).copied().unwrap_or(f64::INFINITY))
        .collect())
}

/// `content(A) - Lambda^{-1} I_K(m(A))`, with `Lambda` the reversibility
/// constant sampled at the grid nodes.
pub fn isoperimetric_deficit(
    form: &WeakForm,
    set: &[bool],
    k: f64,
    schedule: &ContentSchedule,
) -> Result<DeficitReport> {
    check_curvature(k)?;
    let theta = set_fraction(form, set)?;
    let content = minkowski_content(form, set, schedule)?;
    let lambda = reversibility(form)?;
    let bound = gaussian_profile(k, theta)? / lambda;
    let mut report = DeficitReport::new(Inequality::Isoperimetric, bound, content, k);
    report.volume_fraction = Some(theta);
    Ok(report)
}

fn reversibility(form: &WeakForm) -> Result<f64> {
    let grid = form.grid();
    let stride = (grid.len() / 256).max(1);
    let points: Vec<Vector> = (0..grid.len()).step_by(stride).map(|i| grid.point(i)).collect();
    form.model().reversibility_on(&points, 32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::WeightedMeasure;
    use crate::norms::{DomainBox, FinslerModel};
    use crate::spectral::{line_grid, Axis, Grid};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn needle_form(nodes: usize) -> WeakForm {
        let grid = line_grid(8.0, nodes);
        let mu = WeightedMeasure::gaussian(DomainBox::new(vec![-8.0], vec![8.0]), 1.0, vec![0]).normalized_on(&grid);
        WeakForm::new(&FinslerModel::euclidean(1), &mu, grid).unwrap()
    }

    fn field(form: &WeakForm, f: impl Fn(f64) -> f64) -> DiscreteField {
        DiscreteField::from_fn(form.grid().clone(), |x| f(x[0]))
    }

    #[test]
    fn variance_examples() {
        let form = needle_form(2001);
        let mu = form.measure();
        assert!(variance(mu, &field(&form, |_| 2.0)).abs() < 1e-15);
        let t = field(&form, |t| t);
        assert!((variance(mu, &t) - 1.0).abs() < 1e-6);
        let shifted = t.map(|v| v + 5.0);
        assert!((variance(mu, &shifted) - variance(mu, &t)).abs() < 1e-10);
    }

    #[test]
    fn poincare_examples() {
        let form = needle_form(2001);
        let lin = poincare_deficit(&form, &field(&form, |t| t), 1.0).unwrap();
        assert!(lin.deficit.abs() < 1e-3, "{lin:?}");
        let quad = poincare_deficit(&form, &field(&form, |t| t * t - 1.0), 1.0).unwrap();
        assert!((quad.deficit - 2.0).abs() < 1e-2, "{quad:?}");
        assert!(poincare_deficit(&form, &field(&form, |t| t), 0.0).is_err());
    }

    #[test]
    fn log_sobolev_examples() {
        let form = needle_form(2001);
        let one = log_sobolev_deficit(&form, &field(&form, |_| 1.0), 1.0).unwrap();
        assert!(one.deficit.abs() < 1e-12 && one.lhs.abs() < 1e-12);
        let c = 0.5;
        let tilt = log_sobolev_deficit(&form, &field(&form, |t| (c * t - c * c / 2.0).exp()), 1.0).unwrap();
        assert!(tilt.deficit.abs() < 1e-3, "{tilt:?}");
        let bump = log_sobolev_deficit(&form, &field(&form, |t| (-t.powi(4)).exp()), 1.0).unwrap();
        assert!(bump.deficit > 1e-3, "{bump:?}");
        assert!(bump.normalization.unwrap() < 1.0);
        assert!(log_sobolev_deficit(&form, &field(&form, |t| t), 1.0).is_err());
    }

    #[test]
    fn log_sobolev_linearizes_to_poincare() {
        let form = needle_form(1001);
        let eps = 1e-3;
        for (name, f) in [
            ("cubic", (|t: f64| t.powi(3) - 3.0 * t) as fn(f64) -> f64),
            ("sine", |t: f64| t.sin()),
        ] {
            let u = field(&form, f);
            let mean = form.mean(&u);
            let u = u.map(|v| v - mean);
            let ls = log_sobolev_deficit(&form, &u.map(|v| 1.0 + eps * v), 1.0).unwrap();
            let p = poincare_deficit(&form, &u, 1.0).unwrap();
            assert_eq!(ls.deficit > 0.0, p.deficit > 0.0, "{name}");
        }
    }

    #[test]
    fn profile_examples() {
        assert!((gaussian_profile(1.0, 0.5).unwrap() - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-12);
        let theta = standard_cdf(1.0);
        assert!((theta - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert!((gaussian_profile(1.0, theta).unwrap() - (-0.5f64).exp() / (2.0 * PI).sqrt()).abs() < 1e-12);
        assert!((gaussian_quantile(1.0, theta).unwrap() - 1.0).abs() < 1e-12);
        for bad in [0.0, 1.0, -0.2, f64::NAN] {
            assert!(gaussian_profile(1.0, bad).is_err());
        }
        // Scaling: I_K(theta) = sqrt(K) I_1(theta).
        assert!((gaussian_profile(4.0, 0.3).unwrap() - 2.0 * gaussian_profile(1.0, 0.3).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn profile_is_strictly_concave() {
        let h = 1e-3;
        let mut theta = 2.0 * h;
        while theta < 1.0 - 2.0 * h {
            let d2 = gaussian_profile(1.0, theta + h).unwrap() - 2.0 * gaussian_profile(1.0, theta).unwrap()
                + gaussian_profile(1.0, theta - h).unwrap();
            assert!(d2 < 0.0, "theta {theta}");
            theta += h;
        }
    }

    proptest! {
        #[test]
        fn profile_is_symmetric(theta in 1e-6f64..0.999_999, k in 0.1f64..10.0) {
            let a = gaussian_profile(k, theta).unwrap();
            let b = gaussian_profile(k, 1.0 - theta).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-300));
        }
    }

    #[test]
    fn content_of_gaussian_half_line() {
        let form = needle_form(2001);
        let set: Vec<bool> = form.grid().nodes().map(|(_, x)| x[0] <= 0.0).collect();
        let c = minkowski_content(&form, &set, &ContentSchedule::default()).unwrap();
        assert!((c - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-4, "{c}");
        let rep = isoperimetric_deficit(&form, &set, 1.0, &ContentSchedule::default()).unwrap();
        assert!(rep.deficit.abs() < 1e-4, "{rep:?}");
    }

    #[test]
    fn content_of_symmetric_interval_exceeds_profile() {
        let form = needle_form(2001);
        let set: Vec<bool> = form.grid().nodes().map(|(_, x)| x[0].abs() <= 0.6745).collect();
        let rep = isoperimetric_deficit(&form, &set, 1.0, &ContentSchedule::default()).unwrap();
        assert!((rep.volume_fraction.unwrap() - 0.5).abs() < 1e-2);
        assert!(rep.deficit > 0.2, "{rep:?}");
    }

    #[test]
    fn content_of_circle_arc_counts_both_ends() {
        let grid = Arc::new(Grid::new(vec![Axis::periodic(0.0, 1.0, 200)]));
        let mu = WeightedMeasure::uniform(DomainBox::unbounded(1)).normalized_on(&grid);
        let form = WeakForm::new(&FinslerModel::euclidean(1), &mu, grid).unwrap();
        let set: Vec<bool> = form.grid().nodes().map(|(_, x)| x[0] < 0.3).collect();
        let c = minkowski_content(&form, &set, &ContentSchedule::default()).unwrap();
        assert!((c - 2.0).abs() < 1e-12, "{c}");
    }

    #[test]
    fn content_is_direction_sensitive_for_randers_lines() {
        let grid = line_grid(8.0, 1601);
        let mu = WeightedMeasure::gaussian(DomainBox::new(vec![-8.0], vec![8.0]), 1.0, vec![0]).normalized_on(&grid);
        let model = FinslerModel::randers_minkowski(Vector::from_vec(vec![0.5])).unwrap();
        let form = WeakForm::new(&model, &mu, grid.clone()).unwrap();
        let left: Vec<bool> = grid.nodes().map(|(_, x)| x[0] <= 0.0).collect();
        let right: Vec<bool> = grid.nodes().map(|(_, x)| x[0] >= 0.0).collect();
        let s = ContentSchedule::default();
        let a = minkowski_content(&form, &left, &s).unwrap();
        let b = minkowski_content(&form, &right, &s).unwrap();
        // F(+1) = 1.5 and F(-1) = 0.5.
        assert!((b / a - 3.0).abs() < 1e-2, "{a} {b}");
        // Reversal turns one into the other.
        let rev = WeakForm::new(&model.reversed(), &mu, grid).unwrap();
        let a_rev = minkowski_content(&rev, &right, &s).unwrap();
        assert!((a_rev - a).abs() < 1e-2 * a);
        let rep = isoperimetric_deficit(&form, &left, 1.0, &s).unwrap();
        assert!(rep.deficit >= -1e-3, "{rep:?}");
    }

    #[test]
    fn graph_content_on_a_product_strip() {
        let grid = Arc::new(Grid::new(vec![
            Axis::periodic(0.0, 1.0, 16),
            Axis::interval(-8.0, 8.0, 1025),
        ]));
        let dom = DomainBox::new(vec![0.0, -8.0], vec![1.0, 8.0]).with_periodic(0);
        let mu = WeightedMeasure::gaussian(dom.clone(), 1.0, vec![1]).normalized_on(&grid);
        let model = FinslerModel::euclidean(2).with_domain(dom);
        let form = WeakForm::new(&model, &mu, grid.clone()).unwrap();
        let set: Vec<bool> = grid.nodes().map(|(_, x)| x[1] <= 0.0).collect();
        let rep = isoperimetric_deficit(&form, &set, 1.0, &ContentSchedule::default()).unwrap();
        assert!(rep.deficit.abs() < 1e-3, "{rep:?}");
        let empty = vec![false; grid.len()];
        assert!(minkowski_content(&form, &empty, &ContentSchedule::default()).is_err());
    }
}
