//! Scalar fields on a chart and the finite-difference stencils shared by
//! the geometry kernels.
//!
//! All derivative stencils here are fourth-order central differences. The
//! kernels nest them (the Hessian differentiates a gradient that was itself
//! obtained by differentiation), so each nesting level uses a slightly larger
//! step to keep roundoff from compounding.

use nalgebra::{DMatrix, DVector};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Relative step for the innermost stencil.
pub const INNER_STEP: f64 = 1e-3;
/// Relative step for stencils applied to already-differentiated quantities.
pub const OUTER_STEP: f64 = 5e-3;

pub fn relative_step(x: &Vector, rel: f64) -> f64 {
    rel * (1.0 + x.amax())
}

/// Five-point first derivative of a scalar function of one variable.
pub fn derivative_1d(f: impl Fn(f64) -> f64, at: f64, h: f64) -> f64 {
    (f(at - 2.0 * h) - 8.0 * f(at - h) + 8.0 * f(at + h) - f(at + 2.0 * h)) / (12.0 * h)
}

/// Five-point second derivative of a scalar function of one variable.
pub fn second_derivative_1d(f: impl Fn(f64) -> f64, at: f64, h: f64) -> f64 {
    (-f(at - 2.0 * h) + 16.0 * f(at - h) - 30.0 * f(at) + 16.0 * f(at + h) - f(at + 2.0 * h)) / (12.0 * h * h)
}

/// Stencil weights for the first derivative at offsets -2..=2.
pub const D1_WEIGHTS: [f64; 5] = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
/// Stencil weights for the second derivative at offsets -2..=2.
pub const D2_WEIGHTS: [f64; 5] = [-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0];

pub fn gradient(f: impl Fn(&Vector) -> f64, x: &Vector, h: f64) -> Vector {
    let n = x.len();
    let mut out = Vector::zeros(n);
    let mut y = x.clone();
    for i in 0..n {
        let mut acc = 0.0;
        for (k, w) in D1_WEIGHTS.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            y[i] = x[i] + (k as f64 - 2.0) * h;
            acc += w * f(&y);
        }
        y[i] = x[i];
        out[i] = acc / h;
    }
    out
}

/// Jacobian with `out[(i, j)] = d f_i / d x_j`.
pub fn jacobian(f: impl Fn(&Vector) -> Vector, x: &Vector, h: f64) -> Matrix {
    let n = x.len();
    let mut cols: Vec<Vector> = Vec::with_capacity(n);
    let mut y = x.clone();
    for j in 0..n {
        let mut acc: Option<Vector> = None;
        for (k, w) in D1_WEIGHTS.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            y[j] = x[j] + (k as f64 - 2.0) * h;
            let fy = f(&y) * *w;
            acc = Some(match acc {
                Some(a) => a + fy,
                None => fy,
            });
        }
        y[j] = x[j];
        cols.push(acc.expect("stencil is nonempty") / h);
    }
    let m = cols[0].len();
    Matrix::from_fn(m, n, |i, j| cols[j][i])
}

/// A smooth real function on a chart.
///
/// Only `value` is required; the differential defaults to a five-point
/// stencil. Closures `Fn(&Vector) -> f64` implement the trait directly.
pub trait ScalarField: Sync {
    fn value(&self, x: &Vector) -> f64;

    fn differential(&self, x: &Vector) -> Vector {
        gradient(|y| self.value(y), x, relative_step(x, INNER_STEP))
    }
}

impl<F> ScalarField for F
where
    F: Fn(&Vector) -> f64 + Sync,
{
    fn value(&self, x: &Vector) -> f64 {
        self(x)
    }
}

/// A scalar field with a closed-form differential.
pub struct WithDifferential<F, D> {
    pub value: F,
    pub differential: D,
}

impl<F, D> WithDifferential<F, D>
where
    F: Fn(&Vector) -> f64 + Sync,
    D: Fn(&Vector) -> Vector + Sync,
{
    pub fn new(value: F, differential: D) -> Self {
        Self { value, differential }
    }
}

impl<F, D> ScalarField for WithDifferential<F, D>
where
    F: Fn(&Vector) -> f64 + Sync,
    D: Fn(&Vector) -> Vector + Sync,
{
    fn value(&self, x: &Vector) -> f64 {
        (self.value)(x)
    }

    fn differential(&self, x: &Vector) -> Vector {
        (self.differential)(x)
    }
}

/// Linear function `x -> a . x + b`.
#[derive(Clone, Debug)]
pub struct AffineField {
    pub slope: Vector,
    pub offset: f64,
}

impl ScalarField for AffineField {
    fn value(&self, x: &Vector) -> f64 {
        self.slope.dot(x) + self.offset
    }

    fn differential(&self, _x: &Vector) -> Vector {
        self.slope.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stencils_are_exact_on_quartics() {
        let f = |t: f64| 3.0 * t.powi(4) - t.powi(3) + 2.0 * t;
        let at: f64 = 0.7;
        let d1 = 12.0 * at.powi(3) - 3.0 * at * at + 2.0;
        let d2 = 36.0 * at * at - 6.0 * at;
        assert!((derivative_1d(f, at, 0.1) - d1).abs() < 1e-10);
        assert!((second_derivative_1d(f, at, 0.1) - d2).abs() < 1e-9);
    }

    #[test]
    fn jacobian_of_linear_map() {
        let a = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 4.0]);
        let x = Vector::from_vec(vec![0.3, -0.2, 1.1]);
        let j = jacobian(|y| &a * y, &x, 1e-2);
        assert!((j - a).amax() < 1e-12);
    }

    #[test]
    fn closure_fields_use_the_stencil() {
        let f = |x: &Vector| x[0] * x[0] + x[1].sin();
        let x = Vector::from_vec(vec![0.5, 0.25]);
        let d = f.differential(&x);
        assert!((d[0] - 1.0).abs() < 1e-10);
        assert!((d[1] - 0.25f64.cos()).abs() < 1e-10);
    }
}
