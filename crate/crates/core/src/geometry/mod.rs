//! Sprays, connection coefficients and covariant derivatives.
//!
//! The spray is the acceleration field `x'' = a(x, x')` of constant-speed
//! geodesics, obtained from the Euler-Lagrange equations of `F^2/2`. The
//! connection coefficients are recovered from it as
//! `Gamma^i_jk(w) = -1/2 d^2 a^i / dw^j dw^k`.

mod curvature;
mod distance;
mod geodesic;

pub use curvature::{
    bochner_residual, bochner_terms, gradient_vector, hessian, hessian_trace_bound, ricci_on_cube, riemannian_ricci,
    weighted_ricci, BochnerTerms, HessianAtPoint, TraceBound,
};
pub use distance::{distance, DistanceOptions};
pub use geodesic::{flow, integrate_geodesic, Geodesic};

use crate::error::{Error, Result};
use crate::field::{gradient, jacobian, relative_step, Matrix, Vector, INNER_STEP};
use crate::norms::{unit_directions, FinslerModel, MetricField, ModelKind};

/// Christoffel symbols `Gamma^i_jk` of a Riemannian metric, one matrix per `i`.
pub fn christoffel(metric: &dyn MetricField, x: &Vector) -> Result<Vec<Matrix>> {
    let n = metric.dim();
    let g = metric.metric(x);
    let ginv = g.try_inverse().ok_or_else(|| Error::degenerate("metric is singular"))?;
    let partials: Vec<Matrix> = (0..n).map(|k| metric.metric_partial(x, k)).collect();
    let mut out = vec![Matrix::zeros(n, n); n];
    for (i, gi) in out.iter_mut().enumerate() {
        for j in 0..n {
            for k in 0..n {
                let mut acc = 0.0;
                for l in 0..n {
                    acc += ginv[(i, l)] * (partials[j][(l, k)] + partials[k][(l, j)] - partials[l][(j, k)]);
                }
                gi[(j, k)] = 0.5 * acc;
            }
        }
    }
    Ok(out)
}

fn quadratic(gamma: &[Matrix], v: &Vector, w: &Vector) -> Vector {
    Vector::from_iterator(gamma.len(), gamma.iter().map(|gi| v.dot(&(gi * w))))
}

fn is_zero(v: &Vector) -> bool {
    v.iter().all(|c| *c == 0.0)
}

/// Geodesic acceleration at `(x, v)`. Zero at `v = 0`.
pub fn spray(model: &FinslerModel, x: &Vector, v: &Vector) -> Result<Vector> {
    if is_zero(v) || model.is_flat() {
        return Ok(Vector::zeros(model.dim()));
    }
    match model.kind() {
        ModelKind::Riemannian { metric } => Ok(-quadratic(&christoffel(metric.as_ref(), x)?, v, v)),
        ModelKind::Product { first, second } => {
            let (x1, x2) = model.split(x);
            let (v1, v2) = model.split(v);
            let a1 = spray(first, &x1, &v1)?;
            let a2 = spray(second, &x2, &v2)?;
            Ok(crate::norms::concat(&a1, &a2))
        }
        _ => euler_lagrange(model, x, v),
    }
}

/// `x'' = g_v^{-1} (d_x L - (d_x d_v L) v)` for `L = F^2/2`.
fn euler_lagrange(model: &FinslerModel, x: &Vector, v: &Vector) -> Result<Vector> {
    let h = relative_step(x, INNER_STEP);
    let dl = gradient(|y| model.half_sq(y, v), x, h);
    let mixed = jacobian(|y| model.momentum(y, v), x, h);
    let rhs = dl - mixed * v;
    model
        .g(x, v)
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::degenerate("fundamental tensor is singular along the spray"))
}

/// Connection coefficients at a reference vector `w`.
#[derive(Clone, Debug)]
pub struct Connection {
    /// `coeffs[i][(j, k)] = Gamma^i_jk(w)`.
    pub coeffs: Vec<Matrix>,
}

impl Connection {
    pub fn zero(n: usize) -> Self {
        Self {
            coeffs: vec![Matrix::zeros(n, n); n],
        }
    }

    /// `Gamma^i_jk v^j x^k`.
    pub fn contract(&self, v: &Vector, x: &Vector) -> Vector {
        quadratic(&self.coeffs, v, x)
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|m| m.amax()).fold(0.0, f64::max)
    }
}

/// Connection coefficients `Gamma^i_jk(w)` at `x`.
pub fn connection(model: &FinslerModel, x: &Vector, w: &Vector) -> Result<Connection> {
    if is_zero(w) {
        return Err(Error::ZeroSection);
    }
    let n = model.dim();
    if model.is_flat() {
        return Ok(Connection::zero(n));
    }
    match model.kind() {
        ModelKind::Riemannian { metric } => Ok(Connection {
            coeffs: christoffel(metric.as_ref(), x)?,
        }),
        ModelKind::Product { first, second } => {
            let (x1, x2) = model.split(x);
            let (w1, w2) = model.split(w);
            let d1 = first.dim();
            let mut out = Connection::zero(n);
            let blocks = [(first.as_ref(), x1, w1, 0), (second.as_ref(), x2, w2, d1)];
            for (factor, xf, wf, off) in blocks {
                if is_zero(&wf) && !factor.is_riemannian() && !factor.is_flat() {
                    return Err(Error::ZeroSection);
                }
                let c = if is_zero(&wf) {
                    match factor.kind() {
                        ModelKind::Riemannian { metric } => Connection {
                            coeffs: christoffel(metric.as_ref(), &xf)?,
                        },
                        _ => Connection::zero(factor.dim()),
                    }
                } else {
                    connection(factor, &xf, &wf)?
                };
                for (i, gi) in c.coeffs.iter().enumerate() {
                    out.coeffs[off + i]
                        .view_mut((off, off), (factor.dim(), factor.dim()))
                        .copy_from(gi);
                }
            }
            Ok(out)
        }
        _ => spray_connection(model, x, w),
    }
}

/// Second differences of the spray in `w`, Richardson-combined over `h` and `2h`.
fn spray_connection(model: &FinslerModel, x: &Vector, w: &Vector) -> Result<Connection> {
    let n = model.dim();
    let h = 2e-2 * w.norm();
    let a0 = spray(model, x, w)?;
    let second = |h: f64| -> Result<Vec<Vec<Vector>>> {
        let mut d = vec![vec![Vector::zeros(n); n]; n];
        let at = |dj: usize, sj: f64, dk: usize, sk: f64| -> Result<Vector> {
            let mut y = w.clone();
            y[dj] += sj * h;
            y[dk] += sk * h;
            spray(model, x, &y)
        };
        for j in 0..n {
            let mut p = w.clone();
            p[j] += h;
            let mut m = w.clone();
            m[j] -= h;
            d[j][j] = (spray(model, x, &p)? - &a0 * 2.0 + spray(model, x, &m)?) / (h * h);
            for k in 0..j {
                let val = (at(j, 1.0, k, 1.0)? - at(j, 1.0, k, -1.0)? - at(j, -1.0, k, 1.0)? + at(j, -1.0, k, -1.0)?)
                    / (4.0 * h * h);
                d[j][k] = val.clone();
                d[k][j] = val;
            }
        }
        Ok(d)
    };
    let fine = second(h)?;
    let coarse = second(2.0 * h)?;
    let mut out = Connection::zero(n);
    for j in 0..n {
        for k in 0..n {
            let d = (&fine[j][k] * 4.0 - &coarse[j][k]) / 3.0;
            for i in 0..n {
                out.coeffs[i][(j, k)] = -0.5 * d[i];
            }
        }
    }
    Ok(out)
}

/// `D_v^w X (x) = dX(v) + Gamma^i_jk(w) v^j X^k`.
pub fn covariant_derivative(
    model: &FinslerModel,
    x: &Vector,
    v: &Vector,
    reference: &Vector,
    field: &dyn Fn(&Vector) -> Vector,
) -> Result<Vector> {
    if is_zero(reference) {
        return Err(Error::ZeroSection);
    }
    let jx = jacobian(field, x, relative_step(x, INNER_STEP));
    let gamma = connection(model, x, reference)?;
    Ok(jx * v + gamma.contract(v, &field(x)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BerwaldReport {
    pub is_berwald: bool,
    pub max_residual: f64,
}

/// Fit each spray component by a quadratic form in `v` at every sample point
/// and report the worst deviation on unit directions.
pub fn berwald_test(model: &FinslerModel, sample: &[Vector], tol: f64) -> Result<BerwaldReport> {
    if sample.is_empty() {
        return Err(Error::invalid("empty sample"));
    }
    let n = model.dim();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|j| (j..n).map(move |k| (j, k))).collect();
    let count = (4 * pairs.len() + 8).max(12);
    let dirs = unit_directions(n, count);
    let design = Matrix::from_fn(dirs.len(), pairs.len(), |r, c| {
        let (j, k) = pairs[c];
        dirs[r][j] * dirs[r][k]
    });
    let svd = design.clone().svd(true, true);
    let mut worst: f64 = 0.0;
    for x in sample {
        let accel: Vec<Vector> = dirs.iter().map(|d| spray(model, x, d)).collect::<Result<_>>()?;
        for i in 0..n {
            let target = Vector::from_iterator(dirs.len(), accel.iter().map(|a| a[i]));
            let coef = svd
                .solve(&target, 1e-12)
                .map_err(|e| Error::degenerate(format!("berwald fit: {e}")))?;
            let fit = &design * coef;
            worst = worst.max((fit - target).amax());
        }
    }
    Ok(BerwaldReport {
        is_berwald: worst <= tol,
        max_residual: worst,
    })
}
