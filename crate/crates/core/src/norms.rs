//! Finsler structures on a coordinate chart.
//!
//! A [`FinslerModel`] evaluates `F(x, v)` together with its fiber derivatives:
//! the momentum `p = d_v(F^2/2)`, the fundamental tensor
//! `g_ij(v) = 1/2 d^2[F^2]/dv^i dv^j`, and the Legendre transform sending a
//! covector `alpha` to the unique `v` with `F(v) = F*(alpha)` and
//! `alpha(v) = F*(alpha)^2`.
//!
//! Four families are shipped: Riemannian metric fields, x-independent
//! Minkowski norms, Randers metrics `F = |v|_a + b(v)`, and l2-products of two
//! models (`F^2 = F_1^2 + F_2^2`).

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{Matrix, Vector, D1_WEIGHTS};

/// Coordinate box of a chart. Periodic axes never count as exits.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub periodic: Vec<bool>,
}

impl DomainBox {
    pub fn unbounded(dim: usize) -> Self {
        Self {
            lo: vec![f64::NEG_INFINITY; dim],
            hi: vec![f64::INFINITY; dim],
            periodic: vec![false; dim],
        }
    }

    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        let periodic = vec![false; lo.len()];
        Self { lo, hi, periodic }
    }

    pub fn with_periodic(mut self, axis: usize) -> Self {
        self.periodic[axis] = true;
        self
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &Vector) -> bool {
        (0..self.dim()).all(|i| self.periodic[i] || (x[i] >= self.lo[i] && x[i] <= self.hi[i]))
    }

    /// Clamp non-periodic coordinates into the box.
    pub fn clamp(&self, x: &mut Vector) {
        for i in 0..self.dim() {
            if !self.periodic[i] {
                x[i] = x[i].clamp(self.lo[i], self.hi[i]);
            }
        }
    }

    pub fn product(&self, other: &DomainBox) -> DomainBox {
        let mut lo = self.lo.clone();
        lo.extend_from_slice(&other.lo);
        let mut hi = self.hi.clone();
        hi.extend_from_slice(&other.hi);
        let mut periodic = self.periodic.clone();
        periodic.extend_from_slice(&other.periodic);
        DomainBox { lo, hi, periodic }
    }

    /// Deterministic sample of points filling the box (infinite sides are
    /// cut at +-`cap`).
    pub fn sample_points(&self, per_axis: usize, cap: f64) -> Vec<Vector> {
        let n = self.dim();
        let per_axis = per_axis.max(2);
        let total = per_axis.pow(n as u32);
        (0..total)
            .map(|mut flat| {
                let mut x = Vector::zeros(n);
                for i in 0..n {
                    let k = flat % per_axis;
                    flat /= per_axis;
                    let lo = self.lo[i].max(-cap);
                    let hi = self.hi[i].min(cap);
                    x[i] = lo + (hi - lo) * k as f64 / (per_axis - 1) as f64;
                }
                x
            })
            .collect()
    }
}

/// How fiber derivatives of `F^2/2` are obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DerivativeScheme {
    ClosedForm,
    /// Central differences with step `h`; `None` uses `h = 1e-5 (1 + |v|)`.
    CentralDifference {
        step: Option<f64>,
    },
}

/// Riemannian metric field `x -> g(x)`.
pub trait MetricField: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn metric(&self, x: &Vector) -> Matrix;

    /// `d g / d x^k` at `x`.
    fn metric_partial(&self, x: &Vector, k: usize) -> Matrix {
        let h = 1e-3 * (1.0 + x.amax());
        let mut y = x.clone();
        let mut acc = Matrix::zeros(self.dim(), self.dim());
        for (s, w) in D1_WEIGHTS.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            y[k] = x[k] + (s as f64 - 2.0) * h;
            acc += self.metric(&y) * *w;
        }
        acc / h
    }

    fn is_constant(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug)]
pub struct ConstantMetric(pub Matrix);

impl ConstantMetric {
    pub fn euclidean(dim: usize) -> Self {
        Self(Matrix::identity(dim, dim))
    }
}

impl MetricField for ConstantMetric {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn metric(&self, _x: &Vector) -> Matrix {
        self.0.clone()
    }

    fn metric_partial(&self, _x: &Vector, _k: usize) -> Matrix {
        Matrix::zeros(self.dim(), self.dim())
    }

    fn is_constant(&self) -> bool {
        true
    }
}

/// Unit sphere in colatitude/longitude coordinates `(theta, phi)`:
/// `g = diag(1, sin^2 theta)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct RoundSphere;

impl MetricField for RoundSphere {
    fn dim(&self) -> usize {
        2
    }

    fn metric(&self, x: &Vector) -> Matrix {
        let s = x[0].sin();
        Matrix::from_diagonal(&Vector::from_vec(vec![1.0, s * s]))
    }

    fn metric_partial(&self, x: &Vector, k: usize) -> Matrix {
        let mut m = Matrix::zeros(2, 2);
        if k == 0 {
            m[(1, 1)] = 2.0 * x[0].sin() * x[0].cos();
        }
        m
    }
}

/// A one-form field `x -> b(x)`.
pub trait OneForm: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn eval(&self, x: &Vector) -> Vector;
    fn is_constant(&self) -> bool {
        false
    }
}

/// `b(x) = c + M x`.
#[derive(Clone, Debug)]
pub struct AffineOneForm {
    pub constant: Vector,
    pub linear: Matrix,
}

impl AffineOneForm {
    pub fn constant(c: Vector) -> Self {
        let n = c.len();
        Self {
            constant: c,
            linear: Matrix::zeros(n, n),
        }
    }

    pub fn negated(&self) -> Self {
        Self {
            constant: -&self.constant,
            linear: -&self.linear,
        }
    }
}

impl OneForm for AffineOneForm {
    fn dim(&self) -> usize {
        self.constant.len()
    }

    fn eval(&self, x: &Vector) -> Vector {
        &self.constant + &self.linear * x
    }

    fn is_constant(&self) -> bool {
        self.linear.iter().all(|c| *c == 0.0)
    }
}

/// An x-independent norm on the fiber.
pub trait MinkowskiNorm: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn norm(&self, v: &Vector) -> f64;

    /// Closed-form `d_v(F^2/2)`, if available.
    fn momentum(&self, _v: &Vector) -> Option<Vector> {
        None
    }

    /// Closed-form fundamental tensor, if available.
    fn fundamental(&self, _v: &Vector) -> Option<Matrix> {
        None
    }

    fn is_reversible(&self) -> bool {
        false
    }
}

/// Reversible quartic perturbation of the Euclidean norm:
/// `F^2 = |v|^2 + c * sum(v_i^4) / |v|^2`.
///
/// Strongly convex for `0 <= c < 1/3`.
#[derive(Clone, Copy, Debug)]
pub struct QuarticNorm {
    pub dim: usize,
    pub weight: f64,
}

impl MinkowskiNorm for QuarticNorm {
    fn dim(&self) -> usize {
        self.dim
    }

    fn norm(&self, v: &Vector) -> f64 {
        let s = v.norm_squared();
        if s == 0.0 {
            return 0.0;
        }
        let q: f64 = v.iter().map(|c| c.powi(4)).sum();
        (s + self.weight * q / s).sqrt()
    }

    fn momentum(&self, v: &Vector) -> Option<Vector> {
        let s = v.norm_squared();
        if s == 0.0 {
            return Some(Vector::zeros(self.dim));
        }
        let q: f64 = v.iter().map(|c| c.powi(4)).sum();
        let c = self.weight;
        Some(Vector::from_fn(self.dim, |i, _| {
            v[i] + c * (2.0 * v[i].powi(3) / s - q * v[i] / (s * s))
        }))
    }

    fn fundamental(&self, v: &Vector) -> Option<Matrix> {
        let s = v.norm_squared();
        if s == 0.0 {
            return None;
        }
        let q: f64 = v.iter().map(|c| c.powi(4)).sum();
        let c = self.weight;
        let n = self.dim;
        Some(Matrix::from_fn(n, n, |i, j| {
            let d = if i == j { 1.0 } else { 0.0 };
            let hess = 12.0 * v[i] * v[i] * d / s
                - 8.0 * (v[i].powi(3) * v[j] + v[j].powi(3) * v[i]) / (s * s)
                - 2.0 * q * d / (s * s)
                + 8.0 * q * v[i] * v[j] / (s * s * s);
            d + 0.5 * c * hess
        }))
    }

    fn is_reversible(&self) -> bool {
        true
    }
}

#[derive(Debug)]
struct ReversedNorm(Arc<dyn MinkowskiNorm>);

impl MinkowskiNorm for ReversedNorm {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn norm(&self, v: &Vector) -> f64 {
        self.0.norm(&-v)
    }

    fn momentum(&self, v: &Vector) -> Option<Vector> {
        self.0.momentum(&-v).map(|p| -p)
    }

    fn fundamental(&self, v: &Vector) -> Option<Matrix> {
        self.0.fundamental(&-v)
    }

    fn is_reversible(&self) -> bool {
        self.0.is_reversible()
    }
}

#[derive(Clone, Debug)]
pub enum ModelKind {
    Riemannian {
        metric: Arc<dyn MetricField>,
    },
    Minkowski {
        norm: Arc<dyn MinkowskiNorm>,
    },
    /// `F(x, v) = sqrt(a_x(v, v)) + b_x(v)`.
    Randers {
        alpha: Arc<dyn MetricField>,
        beta: Arc<dyn OneForm>,
    },
    /// `F^2 = F_1^2 + F_2^2` on the split tangent space.
    Product {
        first: Box<FinslerModel>,
        second: Box<FinslerModel>,
    },
}

/// A Finsler structure on a chart, immutable after construction.
#[derive(Clone, Debug)]
pub struct FinslerModel {
    dim: usize,
    kind: ModelKind,
    scheme: DerivativeScheme,
    domain: DomainBox,
}

/// Fundamental tensor `g_v` at a base vector.
#[derive(Clone, Debug)]
pub struct FundamentalTensor {
    pub base: Vector,
    pub matrix: Matrix,
}

impl FundamentalTensor {
    pub fn inner(&self, a: &Vector, b: &Vector) -> f64 {
        a.dot(&(&self.matrix * b))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        nalgebra::SymmetricEigen::new(self.matrix.clone()).eigenvalues.min()
    }
}

/// A cotangent vector at a base point.
#[derive(Clone, Debug, PartialEq)]
pub struct Covector {
    pub base: Vector,
    pub components: Vector,
}

impl Covector {
    pub fn new(base: Vector, components: Vector) -> Self {
        Self { base, components }
    }

    pub fn apply(&self, v: &Vector) -> f64 {
        self.components.dot(v)
    }
}

const LEGENDRE_MAX_ITER: usize = 100;
const LEGENDRE_TOL: f64 = 1e-8;

impl FinslerModel {
    pub fn euclidean(dim: usize) -> Self {
        Self::riemannian(Arc::new(ConstantMetric::euclidean(dim)), DomainBox::unbounded(dim))
    }

    pub fn riemannian(metric: Arc<dyn MetricField>, domain: DomainBox) -> Self {
        Self {
            dim: metric.dim(),
            kind: ModelKind::Riemannian { metric },
            scheme: DerivativeScheme::ClosedForm,
            domain,
        }
    }

    pub fn minkowski(norm: Arc<dyn MinkowskiNorm>, domain: DomainBox) -> Self {
        Self {
            dim: norm.dim(),
            kind: ModelKind::Minkowski { norm },
            scheme: DerivativeScheme::ClosedForm,
            domain,
        }
    }

    /// Randers metric, validated by sampling `|b|_a < 1` over the domain box.
    pub fn randers(alpha: Arc<dyn MetricField>, beta: Arc<dyn OneForm>, domain: DomainBox) -> Result<Self> {
        if alpha.dim() != beta.dim() || alpha.dim() != domain.dim() {
            return Err(Error::invalid("randers: dimension mismatch"));
        }
        let per_axis = if alpha.is_constant() && beta.is_constant() {
            2
        } else {
            9
        };
        for x in domain.sample_points(per_axis, 10.0) {
            let b = randers_beta_norm(alpha.as_ref(), beta.as_ref(), &x)?;
            if b >= 1.0 {
                return Err(Error::degenerate(format!(
                    "randers one-form has a-norm {b:.4} >= 1 at {:?}",
                    x.as_slice()
                )));
            }
        }
        Ok(Self {
            dim: alpha.dim(),
            kind: ModelKind::Randers { alpha, beta },
            scheme: DerivativeScheme::ClosedForm,
            domain,
        })
    }

    /// Euclidean `alpha` plus a constant one-form: a Minkowski space of Randers type.
    pub fn randers_minkowski(beta: Vector) -> Result<Self> {
        let n = beta.len();
        Self::randers(
            Arc::new(ConstantMetric::euclidean(n)),
            Arc::new(AffineOneForm::constant(beta)),
            DomainBox::unbounded(n),
        )
    }

    pub fn product(first: FinslerModel, second: FinslerModel) -> Self {
        let domain = first.domain.product(&second.domain);
        Self {
            dim: first.dim + second.dim,
            kind: ModelKind::Product {
                first: Box::new(first),
                second: Box::new(second),
            },
            scheme: DerivativeScheme::ClosedForm,
            domain,
        }
    }

    pub fn with_scheme(mut self, scheme: DerivativeScheme) -> Self {
        self.scheme = scheme;
        if let ModelKind::Product { first, second } = &mut self.kind {
            first.scheme = scheme;
            second.scheme = scheme;
        }
        self
    }

    pub fn with_domain(mut self, domain: DomainBox) -> Self {
        assert_eq!(domain.dim(), self.dim, "domain dimension mismatch");
        self.domain = domain;
        self
    }

    /// The reverse structure `F(x, -v)`.
    pub fn reversed(&self) -> Self {
        let kind = match &self.kind {
            ModelKind::Riemannian { .. } => self.kind.clone(),
            ModelKind::Minkowski { norm } => {
                if norm.is_reversible() {
                    self.kind.clone()
                } else {
                    ModelKind::Minkowski {
                        norm: Arc::new(ReversedNorm(norm.clone())),
                    }
                }
            }
            ModelKind::Randers { alpha, beta } => ModelKind::Randers {
                alpha: alpha.clone(),
                beta: Arc::new(NegatedOneForm(beta.clone())),
            },
            ModelKind::Product { first, second } => ModelKind::Product {
                first: Box::new(first.reversed()),
                second: Box::new(second.reversed()),
            },
        };
        Self { kind, ..self.clone() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn scheme(&self) -> DerivativeScheme {
        self.scheme
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    /// True when `F` does not depend on the base point.
    pub fn is_flat(&self) -> bool {
        match &self.kind {
            ModelKind::Riemannian { metric } => metric.is_constant(),
            ModelKind::Minkowski { .. } => true,
            ModelKind::Randers { alpha, beta } => alpha.is_constant() && beta.is_constant(),
            ModelKind::Product { first, second } => first.is_flat() && second.is_flat(),
        }
    }

    pub fn is_riemannian(&self) -> bool {
        match &self.kind {
            ModelKind::Riemannian { .. } => true,
            ModelKind::Product { first, second } => first.is_riemannian() && second.is_riemannian(),
            _ => false,
        }
    }

    /// Metric matrix when the model is Riemannian (block-diagonal for products).
    pub fn riemannian_metric(&self, x: &Vector) -> Option<Matrix> {
        match &self.kind {
            ModelKind::Riemannian { metric } => Some(metric.metric(x)),
            ModelKind::Product { first, second } => {
                let (x1, x2) = self.split(x);
                let g1 = first.riemannian_metric(&x1)?;
                let g2 = second.riemannian_metric(&x2)?;
                Some(block_diag(&g1, &g2))
            }
            _ => None,
        }
    }

    pub(crate) fn split(&self, x: &Vector) -> (Vector, Vector) {
        match &self.kind {
            ModelKind::Product { first, .. } => {
                let d1 = first.dim;
                (x.rows(0, d1).into_owned(), x.rows(d1, self.dim - d1).into_owned())
            }
            _ => panic!("split called on a non-product model"),
        }
    }

    fn check_finite(&self, x: &Vector, v: &Vector) -> Result<()> {
        if x.len() != self.dim || v.len() != self.dim {
            return Err(Error::invalid(format!(
                "expected dimension {}, got point {} / vector {}",
                self.dim,
                x.len(),
                v.len()
            )));
        }
        if x.iter().chain(v.iter()).any(|c| !c.is_finite()) {
            return Err(Error::invalid("non-finite input"));
        }
        Ok(())
    }

    fn check_randers(&self, x: &Vector) -> Result<()> {
        match &self.kind {
            ModelKind::Randers { alpha, beta } => {
                let b = randers_beta_norm(alpha.as_ref(), beta.as_ref(), x)?;
                if b >= 1.0 {
                    return Err(Error::degenerate(format!(
                        "randers one-form has a-norm {b:.4} >= 1 at {:?}",
                        x.as_slice()
                    )));
                }
                Ok(())
            }
            ModelKind::Product { first, second } => {
                let (x1, x2) = self.split(x);
                first.check_randers(&x1)?;
                second.check_randers(&x2)
            }
            _ => Ok(()),
        }
    }

    /// `F(x, v)`.
    pub fn norm(&self, x: &Vector, v: &Vector) -> Result<f64> {
        self.check_finite(x, v)?;
        self.check_randers(x)?;
        Ok(self.f(x, v))
    }

    /// Unchecked evaluation of `F(x, v)`.
    pub fn f(&self, x: &Vector, v: &Vector) -> f64 {
        match &self.kind {
            ModelKind::Riemannian { metric } => {
                let g = metric.metric(x);
                v.dot(&(&g * v)).max(0.0).sqrt()
            }
            ModelKind::Minkowski { norm } => norm.norm(v),
            ModelKind::Randers { alpha, beta } => {
                let a = alpha.metric(x);
                v.dot(&(&a * v)).max(0.0).sqrt() + beta.eval(x).dot(v)
            }
            ModelKind::Product { first, second } => {
                let (x1, x2) = self.split(x);
                let (v1, v2) = self.split(v);
                let f1 = first.f(&x1, &v1);
                let f2 = second.f(&x2, &v2);
                (f1 * f1 + f2 * f2).sqrt()
            }
        }
    }

    pub(crate) fn half_sq(&self, x: &Vector, v: &Vector) -> f64 {
        let f = self.f(x, v);
        0.5 * f * f
    }

    fn fd_step(&self, v: &Vector) -> Option<f64> {
        match self.scheme {
            DerivativeScheme::ClosedForm => None,
            DerivativeScheme::CentralDifference { step } => Some(step.unwrap_or(1e-5 * (1.0 + v.norm()))),
        }
    }

    /// Momentum `p = d_v(F^2/2)(x, v)`, i.e. `g_v(v, .)`. Zero at `v = 0`.
    pub fn momentum(&self, x: &Vector, v: &Vector) -> Vector {
        if v.iter().all(|c| *c == 0.0) {
            return Vector::zeros(self.dim);
        }
        if let Some(h) = self.fd_step(v) {
            let mut out = Vector::zeros(self.dim);
            let mut w = v.clone();
            for i in 0..self.dim {
                w[i] = v[i] + h;
                let plus = self.half_sq(x, &w);
                w[i] = v[i] - h;
                let minus = self.half_sq(x, &w);
                w[i] = v[i];
                out[i] = (plus - minus) / (2.0 * h);
            }
            return out;
        }
        match &self.kind {
            ModelKind::Riemannian { metric } => metric.metric(x) * v,
            ModelKind::Minkowski { norm } => norm
                .momentum(v)
                .unwrap_or_else(|| fd_momentum(|w| 0.5 * norm.norm(w).powi(2), v)),
            ModelKind::Randers { alpha, beta } => {
                let a = alpha.metric(x);
                let av = &a * v;
                let al = v.dot(&av).max(0.0).sqrt();
                let b = beta.eval(x);
                let f = al + b.dot(v);
                (av / al + b) * f
            }
            ModelKind::Product { first, second } => {
                let (x1, x2) = self.split(x);
                let (v1, v2) = self.split(v);
                concat(&first.momentum(&x1, &v1), &second.momentum(&x2, &v2))
            }
        }
    }

    /// Unchecked fundamental tensor matrix at `v != 0`.
    pub fn g(&self, x: &Vector, v: &Vector) -> Matrix {
        if let Some(h) = self.fd_step(v) {
            return fd_hessian(|w| self.half_sq(x, w), v, h);
        }
        match &self.kind {
            ModelKind::Riemannian { metric } => metric.metric(x),
            ModelKind::Minkowski { norm } => norm
                .fundamental(v)
                .unwrap_or_else(|| fd_hessian(|w| 0.5 * norm.norm(w).powi(2), v, 1e-4 * (1.0 + v.norm()))),
            ModelKind::Randers { alpha, beta } => {
                let a = alpha.metric(x);
                let av = &a * v;
                let al = v.dot(&av).max(0.0).sqrt();
                let b = beta.eval(x);
                let f = al + b.dot(v);
                let l = &av / al;
                let lb = &l + &b;
                (&lb * lb.transpose()) + (a - &l * l.transpose()) * (f / al)
            }
            ModelKind::Product { first, second } => {
                let (x1, x2) = self.split(x);
                let (v1, v2) = self.split(v);
                let g1 = if v1.iter().all(|c| *c == 0.0) {
                    first.g_at_zero(&x1)
                } else {
                    first.g(&x1, &v1)
                };
                let g2 = if v2.iter().all(|c| *c == 0.0) {
                    second.g_at_zero(&x2)
                } else {
                    second.g(&x2, &v2)
                };
                block_diag(&g1, &g2)
            }
        }
    }

    /// A product factor whose velocity component vanishes still contributes
    /// a well-defined block when it is Riemannian; otherwise the tensor is
    /// taken in the direction of the first coordinate axis (a limit value).
    fn g_at_zero(&self, x: &Vector) -> Matrix {
        if let Some(g) = self.riemannian_metric(x) {
            return g;
        }
        let mut e = Vector::zeros(self.dim);
        e[0] = 1.0;
        self.g(x, &e)
    }

    pub fn fundamental_tensor(&self, x: &Vector, v: &Vector) -> Result<FundamentalTensor> {
        self.check_finite(x, v)?;
        if v.iter().all(|c| *c == 0.0) {
            return Err(Error::ZeroSection);
        }
        self.check_randers(x)?;
        let matrix = self.g(x, v);
        if matrix.clone().cholesky().is_none() {
            return Err(Error::degenerate(format!(
                "fundamental tensor is not positive definite at v = {:?}",
                v.as_slice()
            )));
        }
        Ok(FundamentalTensor {
            base: v.clone(),
            matrix,
        })
    }

    /// Legendre transform of a covector at `x`. Returns `0` for `alpha = 0`.
    ///
    /// Damped Newton on `Phi(v) = F^2(v)/2 - alpha(v)`, whose stationarity
    /// system is `p(v) = alpha`; the minimizer is the Legendre image and
    /// `-Phi_min = F*(alpha)^2 / 2`.
    pub fn legendre(&self, x: &Vector, alpha: &Vector) -> Result<Vector> {
        if alpha.len() != self.dim || alpha.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("covector must be finite and of model dimension"));
        }
        if alpha.iter().all(|c| *c == 0.0) {
            return Ok(Vector::zeros(self.dim));
        }
        if self.scheme == DerivativeScheme::ClosedForm {
            match &self.kind {
                ModelKind::Riemannian { metric } => {
                    let g = metric.metric(x);
                    return g
                        .cholesky()
                        .map(|c| c.solve(alpha))
                        .ok_or_else(|| Error::degenerate("metric is not positive definite"));
                }
                ModelKind::Product { first, second } => {
                    let (x1, x2) = self.split(x);
                    let (a1, a2) = self.split(alpha);
                    let v1 = first.legendre(&x1, &a1)?;
                    let v2 = second.legendre(&x2, &a2)?;
                    return Ok(concat(&v1, &v2));
                }
                _ => {}
            }
        }
        self.legendre_newton(x, alpha)
    }

    fn initial_dual(&self, x: &Vector, alpha: &Vector) -> Vector {
        let riemannian_part = match &self.kind {
            ModelKind::Riemannian { metric } => Some(metric.metric(x)),
            ModelKind::Randers { alpha: a, .. } => Some(a.metric(x)),
            ModelKind::Product { .. } => self.riemannian_metric(x),
            ModelKind::Minkowski { .. } => None,
        };
        riemannian_part
            .and_then(|g| g.cholesky())
            .map(|c| c.solve(alpha))
            .unwrap_or_else(|| alpha.clone())
    }

    fn legendre_newton(&self, x: &Vector, alpha: &Vector) -> Result<Vector> {
        let phi = |v: &Vector| self.half_sq(x, v) - alpha.dot(v);
        let mut v = self.initial_dual(x, alpha);
        let scale = alpha.norm();
        let mut residual = f64::INFINITY;
        for _ in 0..LEGENDRE_MAX_ITER {
            let r = self.momentum(x, &v) - alpha;
            residual = r.norm() / scale;
            if residual < 1e-14 {
                break;
            }
            let g = self.g(x, &v);
            let step = match g.cholesky() {
                Some(c) => -c.solve(&r),
                None => -&r,
            };
            let slope = r.dot(&step);
            let f0 = phi(&v);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial = &v + &step * t;
                // Close to the solution the decrease of phi drops below
                // roundoff, so a shrinking residual also accepts the step.
                let shrinks = (self.momentum(x, &trial) - alpha).norm() / scale < 0.5 * residual;
                if shrinks || phi(&trial) <= f0 + 1e-4 * t * slope {
                    v = trial;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        residual = residual.min((self.momentum(x, &v) - alpha).norm() / scale);
        let fv = self.f(x, &v);
        let pairing = alpha.dot(&v);
        let euler = if fv > 0.0 {
            (pairing - fv * fv).abs() / (fv * fv)
        } else {
            f64::INFINITY
        };
        if residual > LEGENDRE_TOL || euler > LEGENDRE_TOL || !fv.is_finite() {
            return Err(Error::NumericalFailure {
                what: "legendre transform".into(),
                best: fv,
                residual: residual.max(euler),
            });
        }
        Ok(v)
    }

    /// Dual norm `F*(alpha) = sup { alpha(v) : F(x, v) <= 1 }`.
    ///
    /// The maximizer on the indicatrix is `L*(alpha) / F(L*(alpha))`, so the
    /// constrained maximum is read off the Legendre solve.
    pub fn dual_norm(&self, x: &Vector, alpha: &Vector) -> Result<f64> {
        let v = self.legendre(x, alpha)?;
        let fv = self.f(x, &v);
        if fv == 0.0 {
            return Ok(0.0);
        }
        Ok((alpha.dot(&v) / fv).max(0.0))
    }

    pub fn dual_norm_of(&self, alpha: &Covector) -> Result<f64> {
        self.dual_norm(&alpha.base, &alpha.components)
    }

    /// Lower bound for the reversibility constant: max of `F(-v)/F(v)` over the sample.
    pub fn reversibility_constant(&self, sample: &[(Vector, Vector)]) -> Result<f64> {
        if sample.is_empty() {
            return Err(Error::invalid("empty sample"));
        }
        let mut best: f64 = 1.0;
        for (x, v) in sample {
            let fwd = self.norm(x, v)?;
            if fwd == 0.0 {
                continue;
            }
            let back = self.f(x, &-v);
            best = best.max(back / fwd);
        }
        Ok(best)
    }

    /// Reversibility estimate over `directions` unit directions at each point.
    pub fn reversibility_on(&self, points: &[Vector], directions: usize) -> Result<f64> {
        let dirs = unit_directions(self.dim, directions);
        let sample: Vec<(Vector, Vector)> = points
            .iter()
            .flat_map(|x| dirs.iter().map(move |d| (x.clone(), d.clone())))
            .collect();
        self.reversibility_constant(&sample)
    }
}

#[derive(Debug)]
struct NegatedOneForm(Arc<dyn OneForm>);

impl OneForm for NegatedOneForm {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn eval(&self, x: &Vector) -> Vector {
        -self.0.eval(x)
    }

    fn is_constant(&self) -> bool {
        self.0.is_constant()
    }
}

fn randers_beta_norm(alpha: &dyn MetricField, beta: &dyn OneForm, x: &Vector) -> Result<f64> {
    let a = alpha.metric(x);
    let b = beta.eval(x);
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::degenerate("randers alpha is not positive definite"))?;
    Ok(b.dot(&chol.solve(&b)).max(0.0).sqrt())
}

fn fd_momentum(l: impl Fn(&Vector) -> f64, v: &Vector) -> Vector {
    let h = 1e-6 * (1.0 + v.norm());
    let mut out = Vector::zeros(v.len());
    let mut w = v.clone();
    for i in 0..v.len() {
        w[i] = v[i] + h;
        let p = l(&w);
        w[i] = v[i] - h;
        let m = l(&w);
        w[i] = v[i];
        out[i] = (p - m) / (2.0 * h);
    }
    out
}

/// Second-order central-difference Hessian.
pub(crate) fn fd_hessian(l: impl Fn(&Vector) -> f64, v: &Vector, h: f64) -> Matrix {
    let n = v.len();
    let mut out = Matrix::zeros(n, n);
    let l0 = l(v);
    let mut w = v.clone();
    for i in 0..n {
        w[i] = v[i] + h;
        let p = l(&w);
        w[i] = v[i] - h;
        let m = l(&w);
        w[i] = v[i];
        out[(i, i)] = (p - 2.0 * l0 + m) / (h * h);
        for j in 0..i {
            let mut eval = |si: f64, sj: f64| {
                w[i] = v[i] + si * h;
                w[j] = v[j] + sj * h;
                let r = l(&w);
                w[i] = v[i];
                w[j] = v[j];
                r
            };
            let d = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0)) / (4.0 * h * h);
            out[(i, j)] = d;
            out[(j, i)] = d;
        }
    }
    out
}

pub(crate) fn block_diag(a: &Matrix, b: &Matrix) -> Matrix {
    let (n1, n2) = (a.nrows(), b.nrows());
    let mut m = Matrix::zeros(n1 + n2, n1 + n2);
    m.view_mut((0, 0), (n1, n1)).copy_from(a);
    m.view_mut((n1, n1), (n2, n2)).copy_from(b);
    m
}

pub(crate) fn concat(a: &Vector, b: &Vector) -> Vector {
    Vector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

/// Deterministic, roughly uniform unit directions (Euclidean) in `R^n`.
pub fn unit_directions(n: usize, count: usize) -> Vec<Vector> {
    if n == 1 {
        return vec![Vector::from_element(1, 1.0), Vector::from_element(1, -1.0)];
    }
    if n == 2 {
        return (0..count)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                Vector::from_vec(vec![a.cos(), a.sin()])
            })
            .collect();
    }
    // Fibonacci-style spiral on the sphere, padded with zeros for n > 3.
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|k| {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let a = golden * k as f64;
            let mut v = Vector::zeros(n);
            v[0] = r * a.cos();
            v[1] = r * a.sin();
            v[2] = z;
            v
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn randers_half() -> FinslerModel {
        FinslerModel::randers_minkowski(Vector::from_vec(vec![0.5, 0.0])).unwrap()
    }

    fn v2(a: f64, b: f64) -> Vector {
        Vector::from_vec(vec![a, b])
    }

    #[test]
    fn euclidean_norm_is_pythagorean() {
        let m = FinslerModel::euclidean(2);
        assert_relative_eq!(m.norm(&v2(0.0, 0.0), &v2(3.0, 4.0)).unwrap(), 5.0);
        assert_eq!(m.norm(&v2(1.0, 1.0), &v2(0.0, 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn randers_norm_adds_the_one_form() {
        let m = randers_half();
        assert_relative_eq!(m.norm(&v2(0.0, 0.0), &v2(1.0, 0.0)).unwrap(), 1.5);
        assert_relative_eq!(m.norm(&v2(0.0, 0.0), &v2(-1.0, 0.0)).unwrap(), 0.5);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let m = FinslerModel::euclidean(2);
        let err = m.norm(&v2(0.0, 0.0), &v2(f64::NAN, 0.0)).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn randers_with_large_one_form_is_degenerate() {
        let err = FinslerModel::randers_minkowski(v2(1.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::ModelDegenerate(_)));
        // x-dependent one-form that leaves the admissible region inside the box.
        let beta = AffineOneForm {
            constant: Vector::zeros(2),
            linear: Matrix::from_row_slice(2, 2, &[0.0, 0.5, 0.0, 0.0]),
        };
        let err = FinslerModel::randers(
            Arc::new(ConstantMetric::euclidean(2)),
            Arc::new(beta),
            DomainBox::new(vec![-3.0, -3.0], vec![3.0, 3.0]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::ModelDegenerate(_)));
    }

    #[test]
    fn fundamental_tensor_at_zero_is_an_error() {
        let m = randers_half();
        assert!(matches!(
            m.fundamental_tensor(&v2(0.0, 0.0), &v2(0.0, 0.0)),
            Err(Error::ZeroSection)
        ));
    }

    #[test]
    fn euclidean_fundamental_tensor_is_identity() {
        let m = FinslerModel::euclidean(2);
        let g = m.fundamental_tensor(&v2(0.3, 0.1), &v2(-2.0, 0.7)).unwrap();
        assert!((g.matrix - Matrix::identity(2, 2)).amax() < 1e-15);
    }

    #[test]
    fn randers_tensor_reproduces_f_squared() {
        let m = randers_half();
        let v = v2(1.0, 0.0);
        let g = m.fundamental_tensor(&v2(0.0, 0.0), &v).unwrap();
        assert_relative_eq!(g.inner(&v, &v), 2.25, max_relative = 1e-12);
    }

    #[test]
    fn randers_tensor_matches_dense_difference_oracle() {
        // Oracle: second-order central differences of F^2/2, written out
        // directly against the closed-form norm formula.
        let f2 = |v: &[f64; 2]| {
            let f = (v[0] * v[0] + v[1] * v[1]).sqrt() + 0.5 * v[0];
            0.5 * f * f
        };
        let v = [0.0, 1.0];
        let h = 1e-5;
        let mut oracle = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = 0.0;
                for (si, sj, w) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                    let mut p = v;
                    p[i] += si * h;
                    p[j] += sj * h;
                    acc += w * f2(&p);
                }
                oracle[i][j] = acc / (4.0 * h * h);
            }
        }
        let m = randers_half();
        let g = m.fundamental_tensor(&v2(0.0, 0.0), &v2(0.0, 1.0)).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((g.matrix[(i, j)] - oracle[i][j]).abs() < 1e-6, "{i}{j}");
            }
        }
        // The finite-difference scheme agrees with the closed form as well.
        let fd = m
            .clone()
            .with_scheme(DerivativeScheme::CentralDifference { step: None });
        let gfd = fd.g(&v2(0.0, 0.0), &v2(0.0, 1.0));
        assert!((gfd - g.matrix).amax() < 1e-5);
    }

    #[test]
    fn euclidean_is_self_dual() {
        let m = FinslerModel::euclidean(2);
        let x = v2(0.0, 0.0);
        assert_relative_eq!(m.dual_norm(&x, &v2(3.0, 4.0)).unwrap(), 5.0, max_relative = 1e-14);
        let v = m.legendre(&x, &v2(3.0, 4.0)).unwrap();
        assert!((v - v2(3.0, 4.0)).amax() < 1e-14);
        assert_eq!(m.legendre(&x, &v2(0.0, 0.0)).unwrap(), v2(0.0, 0.0));
    }

    /// Brute-force oracle for `sup { v^1 : |v| + 0.5 v^1 <= 1 }`: scan the
    /// boundary ray length `r(theta) = 1 / (1 + 0.5 cos theta)`.
    fn randers_dual_oracle() -> f64 {
        let mut best = f64::NEG_INFINITY;
        let n = 200_000;
        for k in 0..n {
            let th = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            let r = 1.0 / (1.0 + 0.5 * th.cos());
            best = best.max(r * th.cos());
        }
        best
    }

    #[test]
    fn randers_dual_norm_matches_oracle() {
        let oracle = randers_dual_oracle();
        assert!((oracle - 2.0 / 3.0).abs() < 1e-9);
        let m = randers_half();
        let d = m.dual_norm(&v2(0.0, 0.0), &v2(1.0, 0.0)).unwrap();
        assert!((d - oracle).abs() < 1e-9);
    }

    #[test]
    fn randers_legendre_satisfies_defining_identities() {
        let m = randers_half();
        let x = v2(0.0, 0.0);
        let alpha = v2(1.0, 0.0);
        let v = m.legendre(&x, &alpha).unwrap();
        // Maximizer on the indicatrix is (2/3, 0); scaled by F* = 2/3.
        assert!((v.clone() - v2(4.0 / 9.0, 0.0)).amax() < 1e-12);
        assert_relative_eq!(m.f(&x, &v), 2.0 / 3.0, max_relative = 1e-10);
        assert_relative_eq!(alpha.dot(&v), 4.0 / 9.0, max_relative = 1e-10);
    }

    #[test]
    fn reversibility_of_shipped_models() {
        let pts = vec![v2(0.0, 0.0), v2(1.0, -1.0)];
        let m = FinslerModel::euclidean(2);
        assert_relative_eq!(m.reversibility_on(&pts, 16).unwrap(), 1.0);
        let q = FinslerModel::minkowski(Arc::new(QuarticNorm { dim: 2, weight: 0.2 }), DomainBox::unbounded(2));
        assert_relative_eq!(q.reversibility_on(&pts, 16).unwrap(), 1.0, max_relative = 1e-14);
        let r = randers_half();
        assert_relative_eq!(r.reversibility_on(&pts, 64).unwrap(), 3.0, max_relative = 1e-12);
        assert!(r.reversibility_constant(&[]).is_err());
    }

    #[test]
    fn reversal_swaps_directions() {
        let r = randers_half();
        let rr = r.reversed();
        let x = v2(0.0, 0.0);
        assert_relative_eq!(rr.f(&x, &v2(1.0, 0.0)), 0.5);
        assert_relative_eq!(rr.f(&x, &v2(-1.0, 0.0)), 1.5);
    }

    #[test]
    fn quartic_closed_form_matches_differences() {
        let q = QuarticNorm { dim: 2, weight: 0.25 };
        let v = v2(0.8, -0.3);
        let p = q.momentum(&v).unwrap();
        let pfd = fd_momentum(|w| 0.5 * q.norm(w).powi(2), &v);
        assert!((p - pfd).amax() < 1e-8);
        let g = q.fundamental(&v).unwrap();
        let gfd = fd_hessian(|w| 0.5 * q.norm(w).powi(2), &v, 1e-4);
        assert!((g - gfd).amax() < 1e-6);
    }

    #[test]
    fn product_blocks_are_independent() {
        let m = FinslerModel::product(randers_half(), FinslerModel::euclidean(1));
        let x = Vector::zeros(3);
        let v = Vector::from_vec(vec![1.0, 0.0, 2.0]);
        assert_relative_eq!(m.f(&x, &v), (2.25f64 + 4.0).sqrt());
        let alpha = Vector::from_vec(vec![1.0, 0.0, 3.0]);
        let w = m.legendre(&x, &alpha).unwrap();
        assert!((w - Vector::from_vec(vec![4.0 / 9.0, 0.0, 3.0])).amax() < 1e-12);
    }
}
