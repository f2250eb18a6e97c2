//! One-dimensional needles `(I, e^{-psi} dt)`, their sharp spectral and
//! isoperimetric solvers, and needle decompositions of product models.
//!
//! On a needle the weighted Ricci curvature is `psi''`, so the curvature
//! condition is checked directly on the log-density.

use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::field::{second_derivative_1d, Vector};
use crate::geometry::{distance, DistanceOptions};
use crate::inequalities::{gaussian_profile, log_sobolev_deficit, DeficitReport};
use crate::measure::WeightedMeasure;
use crate::norms::{DomainBox, FinslerModel};
use crate::spectral::{line_grid, DiscreteField, Grid, WeakForm};

type Potential = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Five-point Gauss-Legendre rule on `[0, 1]`.
const GL_NODES: [f64; 5] = [
    0.046_910_077_030_668_0,
    0.230_765_344_947_158_45,
    0.5,
    0.769_234_655_052_841_6,
    0.953_089_922_969_332,
];
const GL_WEIGHTS: [f64; 5] = [
    0.118_463_442_528_094_54,
    0.239_314_335_249_683_23,
    0.284_444_444_444_444_45,
    0.239_314_335_249_683_23,
    0.118_463_442_528_094_54,
];

/// Step for second differences of the log-density. Five-point stencils are
/// exact on quartics, and this step keeps roundoff near `1e-10` for
/// potentials of size ~100.
const CURVATURE_STEP: f64 = 1e-2;

/// A probability measure `e^{-psi(t)} dt` on a bounded interval with a
/// uniform trapezoidal quadrature.
#[derive(Clone)]
pub struct Needle {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    potential: Potential,
    /// Log of the raw mass, so that `psi = potential + log_mass`.
    log_mass: f64,
    /// Shift subtracted from the potential before exponentiating.
    floor: f64,
    /// Cumulative mass at each node, exact up to the cell quadrature.
    cumulative: Vec<f64>,
}

impl std::fmt::Debug for Needle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Needle")
            .field("interval", &self.interval())
            .field("nodes", &self.nodes.len())
            .field("log_mass", &self.log_mass)
            .finish()
    }
}

impl Needle {
    /// Normalized needle on `[lower, upper]` with `nodes` quadrature nodes.
    pub fn new(
        lower: f64,
        upper: f64,
        nodes: usize,
        potential: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::invalid("needle interval must be finite and nonempty"));
        }
        if nodes < 5 {
            return Err(Error::invalid("a needle needs at least 5 nodes"));
        }
        let h = (upper - lower) / (nodes - 1) as f64;
        let coords: Vec<f64> = (0..nodes).map(|i| lower + h * i as f64).collect();
        let mut weights = vec![h; nodes];
        weights[0] = 0.5 * h;
        weights[nodes - 1] = 0.5 * h;
        let potential: Potential = Arc::new(potential);
        let values: Vec<f64> = coords.iter().map(|t| potential(*t)).collect();
        if values.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
            return Err(Error::invalid("log-density must be finite or +inf"));
        }
        let floor = values.iter().copied().fold(f64::INFINITY, f64::min);
        if !floor.is_finite() {
            return Err(Error::invalid("needle carries no mass"));
        }
        let cell_mass = |a: f64, b: f64| -> f64 {
            let w = b - a;
            GL_NODES
                .iter()
                .zip(GL_WEIGHTS)
                .map(|(s, g)| g * (floor - potential(a + s * w)).exp())
                .sum::<f64>()
                * w
        };
        let mut cumulative = Vec::with_capacity(nodes);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in coords.windows(2) {
            acc += cell_mass(w[0], w[1]);
            cumulative.push(acc);
        }
        let total = acc;
        for c in &mut cumulative {
            *c /= total;
        }
        Ok(Self {
            nodes: coords,
            weights,
            potential,
            log_mass: total.ln() - floor,
            floor,
            cumulative,
        })
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.nodes[0], *self.nodes.last().expect("nonempty"))
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn spacing(&self) -> f64 {
        self.nodes[1] - self.nodes[0]
    }

    /// Normalized log-density.
    pub fn psi(&self, t: f64) -> f64 {
        (self.potential)(t) + self.log_mass
    }

    pub fn density(&self, t: f64) -> f64 {
        (-self.psi(t)).exp()
    }

    /// Trapezoidal masses `w_i e^{-psi(t_i)}`.
    pub fn masses(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(t, w)| w * self.density(*t))
            .collect()
    }

    pub fn mass(&self) -> f64 {
        self.masses().iter().sum()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(self.masses()).map(|(t, m)| m * f(*t)).sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.integrate(|t| t);
        self.integrate(|t| (t - mean) * (t - mean))
    }

    /// `psi''` at the interval point `t`.
    pub fn curvature_at(&self, t: f64) -> f64 {
        second_derivative_1d(|s| (self.potential)(s), t, CURVATURE_STEP)
    }

    /// Minimum of `psi''` over the nodes: the best `K` with `CD(K, infty)`.
    pub fn curvature_lower_bound(&self) -> f64 {
        self.nodes
            .iter()
            .map(|t| self.curvature_at(*t))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn satisfies_cd(&self, k: f64) -> bool {
        self.curvature_lower_bound() >= k - 1e-8
    }

    /// `m((-infty, t])`.
    pub fn cdf(&self, t: f64) -> f64 {
        let (lo, hi) = self.interval();
        if t <= lo {
            return 0.0;
        }
        if t >= hi {
            return 1.0;
        }
        let h = self.spacing();
        let i = (((t - lo) / h).floor() as usize).min(self.nodes.len() - 2);
        let a = self.nodes[i];
        let w = t - a;
        let partial: f64 = GL_NODES
            .iter()
            .zip(GL_WEIGHTS)
            .map(|(s, g)| g * (self.floor - (self.potential)(a + s * w)).exp())
            .sum::<f64>()
            * w;
        // `partial` is in floor-shifted units, whose total is e^{log_mass + floor}.
        self.cumulative[i] + partial * (-(self.log_mass + self.floor)).exp()
    }

    /// Smallest `t` with `cdf(t) = theta`.
    pub fn quantile(&self, theta: f64) -> Result<f64> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::invalid(format!(
                "volume fraction must lie in (0, 1), got {theta}"
            )));
        }
        let i = self
            .cumulative
            .partition_point(|c| *c < theta)
            .clamp(1, self.nodes.len() - 1);
        let (mut lo, mut hi) = (self.nodes[i - 1], self.nodes[i]);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < theta {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut t = 0.5 * (lo + hi);
        for _ in 0..5 {
            let rho = self.density(t);
            if rho <= 0.0 {
                break;
            }
            let next = t - (self.cdf(t) - theta) / rho;
            if !(lo..=hi).contains(&next) {
                break;
            }
            t = next;
        }
        Ok(t)
    }

    /// The needle as a weighted Euclidean line, for the general inequality
    /// functionals.
    pub fn weak_form(&self) -> Result<WeakForm> {
        let (lo, hi) = self.interval();
        let grid = line_grid_on(lo, hi, self.nodes.len());
        let pot = self.potential.clone();
        let domain = DomainBox::new(vec![lo], vec![hi]);
        let measure = WeightedMeasure::new(domain.clone(), move |x| pot(x[0])).normalized_on(&grid);
        WeakForm::new(&FinslerModel::euclidean(1).with_domain(domain), &measure, grid)
    }
}

fn line_grid_on(lo: f64, hi: f64, nodes: usize) -> Arc<Grid> {
    if (lo + hi).abs() < 1e-14 * hi.abs() {
        line_grid(hi, nodes)
    } else {
        Arc::new(Grid::new(vec![crate::spectral::Axis::interval(lo, hi, nodes)]))
    }
}

/// Gaussian needle `N(0, 1/K)` truncated to `[-R, R]`.
pub fn make_gaussian_needle(k: f64, radius: f64, nodes: usize) -> Result<Needle> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::invalid("curvature must be positive"));
    }
    if !(radius >= 6.0 / k.sqrt()) {
        return Err(Error::invalid(format!(
            "truncation radius {radius} is below 6/sqrt(K) = {}",
            6.0 / k.sqrt()
        )));
    }
    Needle::new(-radius, radius, nodes, move |t| 0.5 * k * t * t)
}

/// Spectral data of a needle.
#[derive(Clone, Debug)]
pub struct NeedleSpectrum {
    pub lambda: f64,
    /// Unit variance, positively correlated with `t`.
    pub eigenfunction: Vec<f64>,
    /// `lambda - K`.
    pub deficit: f64,
}

/// Symmetric tridiagonal form `M^{-1/2} S M^{-1/2}` of the zero-flux
/// Sturm-Liouville operator, assembled in log space so that no density is
/// ever exponentiated on its own.
fn sturm_liouville(needle: &Needle) -> (Vec<f64>, Vec<f64>) {
    let n = needle.nodes.len();
    let h = needle.spacing();
    let psi: Vec<f64> = needle.nodes.iter().map(|t| (needle.potential)(*t)).collect();
    let psi_mid: Vec<f64> = needle
        .nodes
        .windows(2)
        .map(|w| (needle.potential)(0.5 * (w[0] + w[1])))
        .collect();
    let w = &needle.weights;
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n - 1];
    for i in 0..n {
        let mut s = 0.0;
        if i > 0 {
            s += (psi[i] - psi_mid[i - 1]).exp();
        }
        if i + 1 < n {
            s += (psi[i] - psi_mid[i]).exp();
        }
        diag[i] = s / (h * w[i]);
    }
    for i in 0..n - 1 {
        off[i] = -(0.5 * (psi[i] + psi[i + 1]) - psi_mid[i]).exp() / (h * (w[i] * w[i + 1]).sqrt());
    }
    (diag, off)
}

/// Number of eigenvalues below `x` (Sturm sequence of the LDL pivots).
fn count_below(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = diag[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..diag.len() {
        let prev = if q.abs() < 1e-300 { 1e-300 } else { q };
        q = diag[i] - x - off[i - 1] * off[i - 1] / prev;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Solve `(T - shift) y = rhs` by the Thomas algorithm.
fn tridiagonal_solve(diag: &[f64], off: &[f64], shift: f64, rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let guard = |q: f64| if q.abs() < 1e-300 { 1e-300 } else { q };
    let mut b = guard(diag[0] - shift);
    c[0] = if n > 1 { off[0] / b } else { 0.0 };
    d[0] = rhs[0] / b;
    for i in 1..n {
        b = guard(diag[i] - shift - off[i - 1] * c[i - 1]);
        if i + 1 < n {
            c[i] = off[i] / b;
        }
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / b;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    d
}

/// First nonzero eigenvalue of `-(e^{-psi} u')' = lambda e^{-psi} u` with
/// zero-flux ends: Sturm bisection on the tridiagonal form, then inverse
/// iteration for the eigenfunction.
pub fn needle_poincare(needle: &Needle, k: f64) -> Result<NeedleSpectrum> {
    let (diag, off) = sturm_liouville(needle);
    let n = diag.len();
    let mut hi = (0..n)
        .map(|i| diag[i] + if i > 0 { off[i - 1].abs() } else { 0.0 } + if i + 1 < n { off[i].abs() } else { 0.0 })
        .fold(0.0, f64::max);
    let mut lo = 0.0;
    // Index 1: the constant mode sits at zero.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if count_below(&diag, &off, mid) >= 2 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let lambda = 0.5 * (lo + hi);
    let shift = lambda * (1.0 - 1e-9);
    let mut y: Vec<f64> = needle.nodes.iter().map(|t| 1.0 + t).collect();
    for _ in 0..4 {
        y = tridiagonal_solve(&diag, &off, shift, &y);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::NumericalFailure {
                what: "needle inverse iteration".into(),
                best: lambda,
                residual: f64::INFINITY,
            });
        }
        y.iter_mut().for_each(|v| *v /= norm);
    }
    // u = M^{-1/2} y, with M = w e^{-psi}.
    let mut u: Vec<f64> = needle
        .nodes
        .iter()
        .zip(&needle.weights)
        .zip(&y)
        .map(|((t, w), v)| v * (0.5 * needle.psi(*t)).exp() / w.sqrt())
        .collect();
    let masses = needle.masses();
    let mean: f64 = u.iter().zip(&masses).map(|(a, m)| a * m).sum();
    let var: f64 = u.iter().zip(&masses).map(|(a, m)| m * (a - mean) * (a - mean)).sum();
    let corr: f64 = u
        .iter()
        .zip(&masses)
        .zip(&needle.nodes)
        .map(|((a, m), t)| a * m * t)
        .sum();
    let s = corr.signum() / var.sqrt();
    u.iter_mut().for_each(|v| *v = (*v - mean) * s);
    Ok(NeedleSpectrum {
        lambda,
        eigenfunction: u,
        deficit: lambda - k,
    })
}

/// Log-Sobolev deficit of a density on the needle.
pub fn needle_logsobolev_deficit(needle: &Needle, rho: impl Fn(f64) -> f64, k: f64) -> Result<DeficitReport> {
    let form = needle.weak_form()?;
    let field = DiscreteField::from_fn(form.grid().clone(), |x| rho(x[0]));
    log_sobolev_deficit(&form, &field, k)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryShape {
    LeftHalfLine,
    RightHalfLine,
    Interval,
}

#[derive(Clone, Debug)]
pub struct IsoperimetricMinimum {
    pub content: f64,
    pub shape: BoundaryShape,
    /// Endpoints of the minimizing set inside the needle interval.
    pub endpoints: (f64, f64),
    /// `I_K(theta)` for comparison.
    pub profile: f64,
}

/// Least boundary measure among half-lines and intervals of measure `theta`.
///
/// Interior boundary points carry their density; the ends of the needle
/// interval are not boundary. Intervals are parametrized by the mass to
/// their left and minimized by a scan followed by golden-section refinement.
pub fn needle_isoperimetric_minimum(needle: &Needle, theta: f64, k: f64) -> Result<IsoperimetricMinimum> {
    let profile = gaussian_profile(k, theta)?;
    let (lo, hi) = needle.interval();
    let a = needle.quantile(theta)?;
    let b = needle.quantile(1.0 - theta)?;
    let mut best = IsoperimetricMinimum {
        content: needle.density(a),
        shape: BoundaryShape::LeftHalfLine,
        endpoints: (lo, a),
        profile,
    };
    if needle.density(b) < best.content {
        best.content = needle.density(b);
        best.shape = BoundaryShape::RightHalfLine;
        best.endpoints = (b, hi);
    }
    let room = 1.0 - theta;
    let interval_content = |s: f64| -> Result<(f64, f64, f64)> {
        let l = needle.quantile(s)?;
        let r = needle.quantile(s + theta)?;
        Ok((needle.density(l) + needle.density(r), l, r))
    };
    let scan = 64;
    let mut samples = Vec::with_capacity(scan);
    for j in 1..scan {
        let s = room * j as f64 / scan as f64;
        samples.push((s, interval_content(s)?.0));
    }
    let (j_min, _) = samples
        .iter()
        .enumerate()
        .min_by(|x, y| x.1 .1.total_cmp(&y.1 .1))
        .expect("nonempty scan");
    let step = room / scan as f64;
    let (mut x0, mut x1) = (
        (samples[j_min].0 - step).max(room * 1e-9),
        (samples[j_min].0 + step).min(room * (1.0 - 1e-9)),
    );
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = x1 - ratio * (x1 - x0);
        let d = x0 + ratio * (x1 - x0);
        if interval_content(c)?.0 < interval_content(d)?.0 {
            x1 = d;
        } else {
            x0 = c;
        }
    }
    let (content, l, r) = interval_content(0.5 * (x0 + x1))?;
    if content < best.content - 1e-12 {
        best = IsoperimetricMinimum {
            content,
            shape: BoundaryShape::Interval,
            endpoints: (l, r),
            profile,
        };
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EqualityClass {
    pub is_gaussian: bool,
    /// `max |psi'' - K|` over the nodes.
    pub max_deviation: f64,
    /// Minimizer of `psi`, the center of the candidate Gaussian.
    pub center: f64,
}

/// Decide whether a needle is the Gaussian `N(c, 1/K)` for some center `c`.
pub fn classify_equality_needle(needle: &Needle, k: f64, tol: f64) -> EqualityClass {
    let max_deviation = needle
        .nodes
        .iter()
        .map(|t| (needle.curvature_at(*t) - k).abs())
        .fold(0.0, f64::max);
    let psi: Vec<f64> = needle.nodes.iter().map(|t| (needle.potential)(*t)).collect();
    let i = psi
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("nonempty needle");
    let h = needle.spacing();
    let center = if i > 0 && i + 1 < psi.len() {
        let curv = psi[i + 1] - 2.0 * psi[i] + psi[i - 1];
        if curv > 0.0 {
            needle.nodes[i] - 0.5 * h * (psi[i + 1] - psi[i - 1]) / curv
        } else {
            needle.nodes[i]
        }
    } else {
        needle.nodes[i]
    };
    EqualityClass {
        is_gaussian: max_deviation <= tol,
        max_deviation,
        center,
    }
}

/// A unit-speed ray `t -> base + t * direction` for `t` in `interval`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportRay {
    pub base: Vector,
    pub direction: Vector,
    pub interval: (f64, f64),
}

impl TransportRay {
    pub fn point(&self, t: f64) -> Vector {
        &self.base + &self.direction * t
    }
}

type Guiding = Arc<dyn Fn(&Vector) -> f64 + Send + Sync>;

/// A needle decomposition of a product grid whose last axis is the line
/// factor: one vertical ray and needle per node of the remaining axes.
#[derive(Clone)]
pub struct NeedleDecomposition {
    model: FinslerModel,
    measure: WeightedMeasure,
    grid: Arc<Grid>,
    guiding: Guiding,
    index_weights: Vec<f64>,
    needles: Vec<Needle>,
    rays: Vec<TransportRay>,
    ray_check: OnceLock<std::result::Result<f64, String>>,
}

impl std::fmt::Debug for NeedleDecomposition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NeedleDecomposition")
            .field("needles", &self.needles.len())
            .field("grid", &self.grid.len())
            .finish()
    }
}

impl NeedleDecomposition {
    /// Vertical rays with guiding function `phi = t` (the last coordinate).
    pub fn along_last_axis(model: &FinslerModel, measure: &WeightedMeasure, grid: Arc<Grid>) -> Result<Self> {
        let d = grid.dim();
        if d < 2 || model.dim() != d {
            return Err(Error::invalid("a product decomposition needs a grid of dimension >= 2"));
        }
        let line = grid.axis(d - 1).clone();
        let (lo, hi) = (line.coords()[0], *line.coords().last().expect("nonempty axis"));
        let stride = grid.stride(d - 1);
        debug_assert_eq!(stride, 1, "last axis varies fastest");
        let bases = grid.len() / line.len();
        let mut index_weights = Vec::with_capacity(bases);
        let mut needles = Vec::with_capacity(bases);
        let mut rays = Vec::with_capacity(bases);
        let mut total = 0.0;
        for q in 0..bases {
            let first = q * line.len();
            let mut base = grid.point(first);
            base[d - 1] = 0.0;
            let marginal: f64 = (0..line.len())
                .map(|j| grid.weight(first + j) * measure.density(&grid.point(first + j)))
                .sum();
            total += marginal;
            index_weights.push(marginal);
            let mu = measure.clone();
            let at = base.clone();
            let needle = Needle::new(lo, hi, line.len(), move |t| {
                let mut x = at.clone();
                x[d - 1] = t;
                mu.psi(&x)
            })?;
            needles.push(needle);
            let mut direction = Vector::zeros(d);
            direction[d - 1] = 1.0;
            rays.push(TransportRay {
                base,
                direction,
                interval: (lo, hi),
            });
        }
        index_weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self {
            model: model.clone(),
            measure: measure.clone(),
            grid,
            guiding: Arc::new(move |x: &Vector| x[d - 1]),
            index_weights,
            needles,
            rays,
            ray_check: OnceLock::new(),
        })
    }

    /// Replace the guiding function. The rays are kept, so this is how a
    /// mismatched decomposition is built.
    pub fn with_guiding(mut self, phi: impl Fn(&Vector) -> f64 + Send + Sync + 'static) -> Self {
        self.guiding = Arc::new(phi);
        self.ray_check = OnceLock::new();
        self
    }

    pub fn needles(&self) -> &[Needle] {
        &self.needles
    }

    pub fn rays(&self) -> &[TransportRay] {
        &self.rays
    }

    pub fn index_weights(&self) -> &[f64] {
        &self.index_weights
    }

    pub fn guiding(&self, x: &Vector) -> f64 {
        (self.guiding)(x)
    }

    /// Largest violation of `phi(ray(t)) - phi(ray(s)) = t - s = d(ray(s), ray(t))`
    /// over three ordered points on a few sampled rays.
    pub fn check_rays(&self) -> Result<f64> {
        let outcome = self.ray_check.get_or_init(|| {
            let picks = [0, self.rays.len() / 2, self.rays.len() - 1];
            let mut worst: f64 = 0.0;
            for &r in &picks {
                let ray = &self.rays[r];
                let (lo, hi) = ray.interval;
                let span = 0.25 * (hi - lo).min(4.0);
                let ts = [-span, 0.3 * span, span];
                let pts: Vec<Vector> = ts.iter().map(|t| ray.point(*t)).collect();
                for i in 0..3 {
                    for j in i + 1..3 {
                        let gap = ts[j] - ts[i];
                        let dphi = self.guiding(&pts[j]) - self.guiding(&pts[i]);
                        let dist = distance(&self.model, &pts[i], &pts[j], DistanceOptions::default())
                            .map_err(|e| e.to_string())?;
                        worst = worst.max((dphi - gap).abs()).max((dist - gap).abs());
                    }
                }
            }
            Ok(worst)
        });
        match outcome {
            Ok(w) if *w <= 1e-6 => Ok(*w),
            Ok(w) => Err(Error::InvalidDecomposition(format!(
                "rays are not transport rays of the guiding function (violation {w:.3e})"
            ))),
            Err(msg) => Err(Error::InvalidDecomposition(msg.clone())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisintegrationCheck {
    pub ambient: f64,
    pub iterated: f64,
    /// `|ambient - iterated| / int |phi| dm`.
    pub error: f64,
}

/// Compare `int phi dm` with `int_Q int_I phi dm_eta dnu(eta)`.
pub fn verify_disintegration(
    decomposition: &NeedleDecomposition,
    test: impl Fn(&Vector) -> f64,
) -> Result<DisintegrationCheck> {
    decomposition.check_rays()?;
    let grid = &decomposition.grid;
    let mut ambient = 0.0;
    let mut absolute = 0.0;
    let mut total = 0.0;
    for (i, x) in grid.nodes() {
        let m = grid.weight(i) * decomposition.measure.density(&x);
        let v = test(&x);
        ambient += m * v;
        absolute += m * v.abs();
        total += m;
    }
    ambient /= total;
    absolute /= total;
    let iterated: f64 = decomposition
        .needles
        .iter()
        .zip(&decomposition.rays)
        .zip(&decomposition.index_weights)
        .map(|((needle, ray), nu)| nu * needle.integrate(|t| test(&ray.point(t))))
        .sum();
    let error = if absolute > 0.0 {
        (ambient - iterated).abs() / absolute
    } else {
        0.0
    };
    Ok(DisintegrationCheck {
        ambient,
        iterated,
        error,
    })
}

/// Per-needle `int (1_{phi <= threshold} - theta) dm_eta`, from the exact
/// needle distribution functions.
pub fn needle_balance(decomposition: &NeedleDecomposition, threshold: f64, theta: f64) -> Result<Vec<f64>> {
    decomposition.check_rays()?;
    Ok(decomposition.needles.iter().map(|n| n.cdf(threshold) - theta).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inequalities::gaussian_quantile;
    use crate::spectral::Axis;
    use std::f64::consts::PI;

    fn quartic(s: f64) -> Needle {
        Needle::new(-8.0, 8.0, 2001, move |t| 0.5 * t * t + s * t.powi(4)).unwrap()
    }

    #[test]
    fn gaussian_needle_moments_and_curvature() {
        let n = make_gaussian_needle(1.0, 8.0, 2001).unwrap();
        assert!((n.mass() - 1.0).abs() < 1e-10);
        assert!((n.variance() - 1.0).abs() < 1e-8);
        assert!((n.curvature_lower_bound() - 1.0).abs() < 1e-9);
        assert!(n.satisfies_cd(1.0) && !n.satisfies_cd(1.1));
        assert!(make_gaussian_needle(1.0, 5.0, 2001).is_err());
        assert!(make_gaussian_needle(0.0, 8.0, 2001).is_err());
    }

    #[test]
    fn cdf_and_quantile_match_the_normal_law() {
        let n = make_gaussian_needle(2.0, 8.0 / 2f64.sqrt(), 1001).unwrap();
        for theta in [1e-6, 0.1, 0.5, 0.8413, 0.999] {
            let exact = gaussian_quantile(2.0, theta).unwrap();
            assert!((n.quantile(theta).unwrap() - exact).abs() < 1e-10, "{theta}");
            assert!((n.cdf(exact) - theta).abs() < 1e-12, "{theta}");
        }
    }

    #[test]
    fn gaussian_needle_spectrum() {
        let n = make_gaussian_needle(1.0, 8.0, 2001).unwrap();
        let s = needle_poincare(&n, 1.0).unwrap();
        assert!((s.lambda - 1.0).abs() < 1e-4, "{}", s.lambda);
        let masses = n.masses();
        let corr: f64 = s
            .eigenfunction
            .iter()
            .zip(&masses)
            .zip(n.nodes())
            .map(|((u, m), t)| u * m * t)
            .sum();
        assert!(corr > 0.9999, "{corr}");
        let short = make_gaussian_needle(1.0, 6.0, 1501).unwrap();
        let s6 = needle_poincare(&short, 1.0).unwrap();
        assert!((s6.lambda - s.lambda).abs() < 1e-6, "{} {}", s6.lambda, s.lambda);
    }

    #[test]
    fn quartic_needle_has_a_strict_gap() {
        let n = quartic(0.1);
        assert!(n.satisfies_cd(1.0));
        let s = needle_poincare(&n, 1.0).unwrap();
        assert!(s.lambda > 1.0 + 1e-2, "{}", s.lambda);
    }

    #[test]
    fn rigidity_family_is_monotone() {
        let ss = [0.0, 0.01, 0.05, 0.1, 0.2];
        let deficits: Vec<f64> = ss
            .iter()
            .map(|s| needle_poincare(&quartic(*s), 1.0).unwrap().deficit)
            .collect();
        assert!(deficits[0].abs() < 1e-4);
        for w in deficits.windows(2) {
            assert!(w[1] > w[0] + 1e-6, "{deficits:?}");
        }
        for (s, d) in ss.iter().zip(&deficits) {
            let class = classify_equality_needle(&quartic(*s), 1.0, 1e-2);
            assert_eq!(class.is_gaussian, d.abs() < 1e-3, "s = {s}");
        }
    }

    #[test]
    fn needle_log_sobolev_examples() {
        let n = make_gaussian_needle(1.0, 8.0, 2001).unwrap();
        assert!(needle_logsobolev_deficit(&n, |_| 1.0, 1.0).unwrap().deficit.abs() < 1e-12);
        let c = 0.5;
        let tilt = needle_logsobolev_deficit(&n, |t| (c * t - c * c / 2.0).exp(), 1.0).unwrap();
        assert!(tilt.deficit.abs() < 1e-3, "{tilt:?}");
        let q = quartic(0.1);
        for rho in [
            (|t: f64| (0.3 * t).exp()) as fn(f64) -> f64,
            |t: f64| 1.0 + 0.5 * t.sin(),
            |t: f64| (-t * t).exp(),
        ] {
            assert!(needle_logsobolev_deficit(&q, rho, 1.0).unwrap().deficit >= -1e-3);
        }
    }

    #[test]
    fn isoperimetric_minimum_on_needles() {
        let n = make_gaussian_needle(1.0, 8.0, 2001).unwrap();
        let half = needle_isoperimetric_minimum(&n, 0.5, 1.0).unwrap();
        assert!((half.content - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-4);
        assert_ne!(half.shape, BoundaryShape::Interval);
        let tiny = needle_isoperimetric_minimum(&n, 1e-9, 1.0).unwrap();
        assert!(tiny.content < 1e-7);
        let q = quartic(0.1);
        for theta in [0.05, 0.2, 0.5, 0.7, 0.95] {
            let m = needle_isoperimetric_minimum(&q, theta, 1.0).unwrap();
            assert!(m.content >= m.profile - 1e-3, "{theta}: {m:?}");
        }
    }

    #[test]
    fn classification_examples() {
        let g = make_gaussian_needle(1.0, 8.0, 2001).unwrap();
        let c = classify_equality_needle(&g, 1.0, 1e-6);
        assert!(c.is_gaussian && c.center.abs() < 1e-9);
        let q = classify_equality_needle(&quartic(0.1), 1.0, 1e-2);
        assert!(!q.is_gaussian);
        assert!((q.max_deviation - 1.2 * 64.0).abs() < 1e-6, "{}", q.max_deviation);
        let shifted = Needle::new(-7.0, 9.0, 2001, |t| 0.5 * (t - 1.0) * (t - 1.0)).unwrap();
        let s = classify_equality_needle(&shifted, 1.0, 1e-6);
        assert!(s.is_gaussian && (s.center - 1.0).abs() < 1e-9);
    }

    fn circle_product() -> NeedleDecomposition {
        let l = 2.0 * PI;
        let grid = Arc::new(Grid::new(vec![
            Axis::periodic(0.0, l, 16),
            Axis::interval(-8.0, 8.0, 401),
        ]));
        let dom = DomainBox::new(vec![0.0, -8.0], vec![l, 8.0]).with_periodic(0);
        let mu = WeightedMeasure::gaussian(dom.clone(), 1.0, vec![1]).normalized_on(&grid);
        NeedleDecomposition::along_last_axis(&FinslerModel::euclidean(2).with_domain(dom), &mu, grid).unwrap()
    }

    #[test]
    fn product_disintegration() {
        let dec = circle_product();
        assert!(dec.check_rays().unwrap() < 1e-6);
        let one = verify_disintegration(&dec, |_| 1.0).unwrap();
        assert!((one.ambient - 1.0).abs() < 1e-12 && (one.iterated - 1.0).abs() < 1e-10);
        for f in [
            (|x: &Vector| x[1] * x[1]) as fn(&Vector) -> f64,
            |x: &Vector| x[0].cos() * x[1],
            |_: &Vector| 1.0,
        ] {
            assert!(verify_disintegration(&dec, f).unwrap().error <= 1e-6);
        }
        let theta = 0.3;
        let a = gaussian_quantile(1.0, theta).unwrap();
        for b in needle_balance(&dec, a, theta).unwrap() {
            assert!(b.abs() < 1e-8, "{b}");
        }
    }

    #[test]
    fn mismatched_guiding_function_is_rejected() {
        let dec = circle_product().with_guiding(|x| 1.2 * x[1]);
        assert!(matches!(
            verify_disintegration(&dec, |_| 1.0),
            Err(Error::InvalidDecomposition(_))
        ));
    }
}
