//! Weighted Ricci curvature, Hessians and the Bochner identity.
//!
//! Ricci curvature in a direction `v` is the Riemannian Ricci curvature of
//! `g_V`, where `V` extends `v` to a geodesic field by the spray flow. The
//! computation happens in flow coordinates `y = (t, s)` where, by
//! construction, `V = d/dt`; the metric `g_V` is pulled back there and its
//! Ricci tensor is assembled from finite differences of Christoffel symbols.

use std::cell::RefCell;
use std::collections::HashMap;

use super::{connection, flow};
use crate::error::{Error, Result};
use crate::field::{
    gradient, relative_step, Matrix, ScalarField, Vector, D1_WEIGHTS, D2_WEIGHTS, INNER_STEP, OUTER_STEP,
};
use crate::measure::WeightedMeasure;
use crate::norms::FinslerModel;

const STENCIL_RADIUS: i32 = 4;
const FLOW_RADIUS: i32 = 6;
const FLOW_SPACING: f64 = 0.02;
const FLOW_SUBSTEPS: usize = 8;

/// `Ric(dir, dir)` of a metric sampled on the integer lattice `delta * idx`
/// around the origin. `metric_at` is queried with `|idx_i| <= 4` and at most
/// two nonzero entries.
pub fn ricci_on_cube(n: usize, delta: f64, metric_at: impl Fn(&[i32]) -> Matrix, dir: &Vector) -> Result<f64> {
    let cache: RefCell<HashMap<Vec<i32>, Matrix>> = RefCell::new(HashMap::new());
    let g = |idx: &[i32]| -> Matrix {
        debug_assert!(idx.iter().all(|i| i.abs() <= STENCIL_RADIUS));
        if let Some(m) = cache.borrow().get(idx) {
            return m.clone();
        }
        let m = metric_at(idx);
        cache.borrow_mut().insert(idx.to_vec(), m.clone());
        m
    };
    let shifted = |p: &[i32], axis: usize, k: i32| -> Vec<i32> {
        let mut q = p.to_vec();
        q[axis] += k;
        q
    };
    let dg = |p: &[i32], axis: usize| -> Matrix {
        let mut acc = Matrix::zeros(n, n);
        for (k, w) in D1_WEIGHTS.iter().enumerate() {
            if *w != 0.0 {
                acc += g(&shifted(p, axis, k as i32 - 2)) * *w;
            }
        }
        acc / delta
    };
    let gamma = |p: &[i32]| -> Result<Vec<Matrix>> {
        let ginv = g(p)
            .try_inverse()
            .ok_or_else(|| Error::degenerate("pulled-back metric is singular"))?;
        let d: Vec<Matrix> = (0..n).map(|l| dg(p, l)).collect();
        let mut out = vec![Matrix::zeros(n, n); n];
        for (i, gi) in out.iter_mut().enumerate() {
            for j in 0..n {
                for k in 0..n {
                    let mut acc = 0.0;
                    for l in 0..n {
                        acc += ginv[(i, l)] * (d[j][(l, k)] + d[k][(l, j)] - d[l][(j, k)]);
                    }
                    gi[(j, k)] = 0.5 * acc;
                }
            }
        }
        Ok(out)
    };
    let origin = vec![0i32; n];
    let g0 = gamma(&origin)?;
    // dgamma[l][i] = d_l Gamma^i at the origin.
    let mut dgamma: Vec<Vec<Matrix>> = Vec::with_capacity(n);
    for l in 0..n {
        let mut acc = vec![Matrix::zeros(n, n); n];
        for (k, w) in D1_WEIGHTS.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            let gk = gamma(&shifted(&origin, l, k as i32 - 2))?;
            for i in 0..n {
                acc[i] += &gk[i] * (*w / delta);
            }
        }
        dgamma.push(acc);
    }
    let mut ric = Matrix::zeros(n, n);
    for j in 0..n {
        for k in 0..n {
            let mut r = 0.0;
            for i in 0..n {
                r += dgamma[i][i][(j, k)] - dgamma[k][i][(i, j)];
                for p in 0..n {
                    r += g0[i][(i, p)] * g0[p][(j, k)] - g0[i][(k, p)] * g0[p][(i, j)];
                }
            }
            ric[(j, k)] = r;
        }
    }
    Ok(dir.dot(&(&ric * dir)))
}

/// Ricci curvature of a Riemannian model computed directly in chart
/// coordinates (no geodesic extension involved).
pub fn riemannian_ricci(model: &FinslerModel, x: &Vector, v: &Vector) -> Result<f64> {
    if !model.is_riemannian() {
        return Err(Error::invalid("chart Ricci needs a Riemannian model"));
    }
    let n = model.dim();
    ricci_on_cube(
        n,
        FLOW_SPACING,
        |idx| {
            let y = Vector::from_fn(n, |i, _| x[i] + FLOW_SPACING * idx[i] as f64);
            model.riemannian_metric(&y).expect("riemannian")
        },
        v,
    )
}

fn transversal_basis(u: &Vector) -> Vec<Vector> {
    let n = u.len();
    let mut basis: Vec<Vector> = vec![u.normalize()];
    for k in 0..n {
        let mut e = Vector::zeros(n);
        e[k] = 1.0;
        for b in &basis {
            e -= b * b.dot(&e);
        }
        let norm = e.norm();
        if norm > 1e-6 && basis.len() < n {
            basis.push(e / norm);
        }
    }
    basis.remove(0);
    basis
}

/// Geodesic flow sampled on `(t, s) in [-6, 6]^n * delta`, with transversal
/// offsets `s` along a Euclidean orthonormal complement of `u`.
struct FlowChart {
    n: usize,
    side: usize,
    points: Vec<Vector>,
    velocities: Vec<Vector>,
}

impl FlowChart {
    fn build(model: &FinslerModel, x: &Vector, u: &Vector) -> Result<Self> {
        let n = model.dim();
        let basis = transversal_basis(u);
        let side = (2 * FLOW_RADIUS + 1) as usize;
        let lines = side.pow((n - 1) as u32);
        let total = lines * side;
        let mut points = vec![Vector::zeros(n); total];
        let mut velocities = vec![Vector::zeros(n); total];
        let mut s = vec![0i32; n - 1];
        for line in 0..lines {
            let mut rem = line;
            for a in s.iter_mut() {
                *a = (rem % side) as i32 - FLOW_RADIUS;
                rem /= side;
            }
            let mut p = x.clone();
            for (a, e) in s.iter().zip(&basis) {
                p += e * (FLOW_SPACING * *a as f64);
            }
            let mid = FLOW_RADIUS as usize;
            points[line * side + mid] = p.clone();
            velocities[line * side + mid] = u.clone();
            for dir in [1i32, -1] {
                let (mut y, mut w) = (p.clone(), u.clone());
                for j in 1..=FLOW_RADIUS {
                    let (yn, wn) = flow(model, &y, &w, dir as f64 * FLOW_SPACING, FLOW_SUBSTEPS)?;
                    y = yn;
                    w = wn;
                    let idx = (mid as i32 + dir * j) as usize;
                    points[line * side + idx] = y.clone();
                    velocities[line * side + idx] = w.clone();
                }
            }
        }
        Ok(Self {
            n,
            side,
            points,
            velocities,
        })
    }

    /// `idx[0]` is the flow time, `idx[1..]` the transversal offsets.
    fn flat(&self, idx: &[i32]) -> usize {
        let mut line = 0usize;
        for a in (1..self.n).rev() {
            line = line * self.side + (idx[a] + FLOW_RADIUS) as usize;
        }
        line * self.side + (idx[0] + FLOW_RADIUS) as usize
    }

    fn jacobian(&self, idx: &[i32]) -> Matrix {
        let n = self.n;
        let mut j = Matrix::zeros(n, n);
        j.set_column(0, &self.velocities[self.flat(idx)]);
        let mut q = idx.to_vec();
        for a in 1..n {
            let mut col = Vector::zeros(n);
            for (k, w) in D1_WEIGHTS.iter().enumerate() {
                if *w != 0.0 {
                    q[a] = idx[a] + k as i32 - 2;
                    col += &self.points[self.flat(&q)] * *w;
                }
            }
            q[a] = idx[a];
            j.set_column(a, &(col / FLOW_SPACING));
        }
        j
    }
}

fn check_dimension_parameter(n: usize, n_eff: f64) -> Result<()> {
    if n_eff.is_nan() || (n_eff >= 0.0 && n_eff <= n as f64) {
        return Err(Error::invalid(format!(
            "dimension parameter {n_eff} must lie in (-inf, 0) or ({n}, inf]"
        )));
    }
    Ok(())
}

/// Weighted Ricci curvature `Ric_N(v)`; pass `f64::INFINITY` for `Ric_inf`.
pub fn weighted_ricci(
    model: &FinslerModel,
    measure: &WeightedMeasure,
    x: &Vector,
    v: &Vector,
    n_eff: f64,
) -> Result<f64> {
    let n = model.dim();
    check_dimension_parameter(n, n_eff)?;
    if v.iter().all(|c| *c == 0.0) {
        return Err(Error::ZeroSection);
    }
    let speed = model.norm(x, v)?;
    let u = v / speed;
    let chart = FlowChart::build(model, x, &u)?;
    let mut origin = vec![0i32; n];
    let mut psi = [0.0; 5];
    for (k, slot) in psi.iter_mut().enumerate() {
        origin[0] = k as i32 - 2;
        let i = chart.flat(&origin);
        *slot = measure.psi_with_volume(model, &chart.points[i], &chart.velocities[i]);
    }
    let d1: f64 = psi.iter().zip(D1_WEIGHTS).map(|(p, w)| p * w).sum::<f64>() / FLOW_SPACING;
    let d2: f64 = psi.iter().zip(D2_WEIGHTS).map(|(p, w)| p * w).sum::<f64>() / (FLOW_SPACING * FLOW_SPACING);
    let ric = if n == 1 || model.is_flat() {
        0.0
    } else {
        let mut e_t = Vector::zeros(n);
        e_t[0] = 1.0;
        ricci_on_cube(
            n,
            FLOW_SPACING,
            |idx| {
                let i = chart.flat(idx);
                let j = chart.jacobian(idx);
                j.transpose() * model.g(&chart.points[i], &chart.velocities[i]) * j
            },
            &e_t,
        )?
    };
    let mut val = ric + d2;
    if n_eff.is_finite() {
        val -= d1 * d1 / (n_eff - n as f64);
    }
    Ok(val * speed * speed)
}

/// `nabla u(x)`: the Legendre image of `du(x)`, zero off the essential domain.
pub fn gradient_vector(model: &FinslerModel, u: &dyn ScalarField, x: &Vector) -> Result<Vector> {
    let du = u.differential(x);
    model.legendre(x, &du)
}

/// Step along one axis, scaled by that coordinate alone. A shared scale lets
/// a large coordinate on one axis inflate the step on another, where the
/// chart can be far less smooth (a colatitude near a pole).
fn axis_step(x: &Vector, axis: usize, rel: f64) -> f64 {
    rel * (1.0 + x[axis].abs())
}

/// Five-point Jacobian with step `step(j)` along axis `j`.
fn try_jacobian(f: impl Fn(&Vector) -> Result<Vector>, x: &Vector, step: impl Fn(usize) -> f64) -> Result<Matrix> {
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut y = x.clone();
    for j in 0..n {
        let h = step(j);
        let mut acc: Option<Vector> = None;
        for (k, w) in D1_WEIGHTS.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            y[j] = x[j] + (k as f64 - 2.0) * h;
            let fy = f(&y)? * *w;
            acc = Some(match acc {
                Some(a) => a + fy,
                None => fy,
            });
        }
        y[j] = x[j];
        cols.push(acc.expect("stencil is nonempty") / h);
    }
    let m = cols[0].len();
    Ok(Matrix::from_fn(m, n, |i, j| cols[j][i]))
}

fn try_partial(f: impl Fn(&Vector) -> Result<f64>, x: &Vector, axis: usize, h: f64) -> Result<f64> {
    let mut y = x.clone();
    let mut acc = 0.0;
    for (k, w) in D1_WEIGHTS.iter().enumerate() {
        if *w != 0.0 {
            y[axis] = x[axis] + (k as f64 - 2.0) * h;
            acc += w * f(&y)?;
        }
    }
    Ok(acc / h)
}

fn try_directional(f: impl Fn(&Vector) -> Result<f64>, x: &Vector, dir: &Vector, h: f64) -> Result<f64> {
    let scale = dir.amax();
    if scale == 0.0 {
        return Ok(0.0);
    }
    let hs = h / scale;
    let mut acc = 0.0;
    for (k, w) in D1_WEIGHTS.iter().enumerate() {
        if *w != 0.0 {
            acc += w * f(&(x + dir * ((k as f64 - 2.0) * hs)))?;
        }
    }
    Ok(acc / hs)
}

/// Hessian `v -> D_v^{nabla u} nabla u` at a point of the essential domain.
#[derive(Clone, Debug)]
pub struct HessianAtPoint {
    pub base: Vector,
    pub gradient: Vector,
    pub matrix: Matrix,
    /// `g_{nabla u}(x)`.
    pub metric: Matrix,
}

impl HessianAtPoint {
    /// `||nabla^2 u||^2_{HS(nabla u)} = tr(g^{-1} H^T g H)`.
    pub fn hs_norm_sq(&self) -> f64 {
        let ginv = self
            .metric
            .clone()
            .try_inverse()
            .expect("fundamental tensor is invertible");
        (ginv * self.matrix.transpose() * &self.metric * &self.matrix).trace()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// `|g(H v, w) - g(v, H w)|`.
    pub fn self_adjointness_residual(&self, v: &Vector, w: &Vector) -> f64 {
        let hv = &self.matrix * v;
        let hw = &self.matrix * w;
        (hv.dot(&(&self.metric * w)) - v.dot(&(&self.metric * hw))).abs()
    }
}

fn essential(du: &Vector) -> Result<()> {
    if du.amax() <= 1e-12 {
        Err(Error::ZeroSection)
    } else {
        Ok(())
    }
}

pub fn hessian(model: &FinslerModel, u: &dyn ScalarField, x: &Vector) -> Result<HessianAtPoint> {
    essential(&u.differential(x))?;
    let grad = gradient_vector(model, u, x)?;
    let jac = try_jacobian(|y| gradient_vector(model, u, y), x, |j| axis_step(x, j, INNER_STEP))?;
    let gamma = connection(model, x, &grad)?;
    let n = model.dim();
    let mut h = jac;
    for i in 0..n {
        let row = &gamma.coeffs[i] * &grad;
        for j in 0..n {
            h[(i, j)] += row[j];
        }
    }
    Ok(HessianAtPoint {
        base: x.clone(),
        metric: model.g(x, &grad),
        gradient: grad,
        matrix: h,
    })
}

/// Both sides of `||nabla^2 u||^2 >= (Delta u + dPsi(nabla u))^2 / n`.
#[derive(Clone, Copy, Debug)]
pub struct TraceBound {
    pub hs_norm_sq: f64,
    /// `Delta u + dPsi(nabla u)`, computed without the Hessian matrix.
    pub trace: f64,
    pub bound: f64,
}

pub fn hessian_trace_bound(
    model: &FinslerModel,
    _measure: &WeightedMeasure,
    u: &dyn ScalarField,
    x: &Vector,
) -> Result<TraceBound> {
    let hs = hessian(model, u, x)?;
    let h1 = relative_step(x, OUTER_STEP);
    // Delta u + dpsi(nabla u) = div(nabla u); the volume part of Psi is the
    // derivative of 1/2 log det g_{nabla u} along nabla u.
    let mut div = 0.0;
    for i in 0..model.dim() {
        div += try_partial(|y| Ok(gradient_vector(model, u, y)?[i]), x, i, h1)?;
    }
    let logdet = |y: &Vector| -> Result<f64> {
        let g = gradient_vector(model, u, y)?;
        Ok(0.5 * model.g(y, &g).determinant().ln())
    };
    let vol = try_directional(logdet, x, &hs.gradient, h1)?;
    let trace = div + vol;
    Ok(TraceBound {
        hs_norm_sq: hs.hs_norm_sq(),
        trace,
        bound: trace * trace / model.dim() as f64,
    })
}

/// The individual terms of the Bochner identity at a point.
#[derive(Clone, Copy, Debug)]
pub struct BochnerTerms {
    /// `Delta^{nabla u}[F^2(nabla u)/2]`.
    pub linearized_energy: f64,
    /// `d(Delta u)(nabla u)`.
    pub laplacian_slope: f64,
    pub ricci: f64,
    pub hessian_sq: f64,
}

impl BochnerTerms {
    pub fn lhs(&self) -> f64 {
        self.linearized_energy - self.laplacian_slope
    }

    pub fn rhs(&self) -> f64 {
        self.ricci + self.hessian_sq
    }

    pub fn residual(&self) -> f64 {
        self.lhs() - self.rhs()
    }
}

pub fn bochner_terms(
    model: &FinslerModel,
    measure: &WeightedMeasure,
    u: &dyn ScalarField,
    x: &Vector,
) -> Result<BochnerTerms> {
    essential(&u.differential(x))?;
    let n = model.dim();
    let h1 = |i: usize| axis_step(x, i, 3e-4);
    let h2 = |i: usize| axis_step(x, i, 1e-3);
    let dpsi = |y: &Vector| gradient(|z| measure.psi(z), y, relative_step(y, INNER_STEP));
    let grad = |y: &Vector| gradient_vector(model, u, y);
    let energy = |y: &Vector| -> Result<f64> {
        let g = grad(y)?;
        Ok(model.half_sq(y, &g))
    };
    // Linearized gradient of the energy density, `g_{nabla u}^{-1} d(energy)`.
    let lin_grad = |y: &Vector| -> Result<Vector> {
        let mut de = Vector::zeros(n);
        for i in 0..n {
            de[i] = try_partial(energy, y, i, h1(i))?;
        }
        let g = model.g(y, &grad(y)?);
        g.cholesky()
            .map(|c| c.solve(&de))
            .ok_or_else(|| Error::degenerate("fundamental tensor is singular"))
    };
    let mut linearized_energy = -dpsi(x).dot(&lin_grad(x)?);
    for i in 0..n {
        linearized_energy += try_partial(|y| Ok(lin_grad(y)?[i]), x, i, h2(i))?;
    }
    let laplacian = |y: &Vector| -> Result<f64> {
        let mut div = -dpsi(y).dot(&grad(y)?);
        for i in 0..n {
            div += try_partial(|z| Ok(grad(z)?[i]), y, i, h1(i))?;
        }
        Ok(div)
    };
    let g0 = grad(x)?;
    let laplacian_slope = try_directional(laplacian, x, &g0, (0..n).map(h2).fold(f64::INFINITY, f64::min))?;
    let ricci = weighted_ricci(model, measure, x, &g0, f64::INFINITY)?;
    let hessian_sq = hessian(model, u, x)?.hs_norm_sq();
    Ok(BochnerTerms {
        linearized_energy,
        laplacian_slope,
        ricci,
        hessian_sq,
    })
}

/// LHS minus RHS of the Bochner identity at `x`.
pub fn bochner_residual(
    model: &FinslerModel,
    measure: &WeightedMeasure,
    u: &dyn ScalarField,
    x: &Vector,
) -> Result<f64> {
    Ok(bochner_terms(model, measure, u, x)?.residual())
}
