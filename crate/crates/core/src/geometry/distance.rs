use argmin::core::{CostFunction, Error as ArgminError, Executor, Gradient};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;

use super::geodesic::integrate_geodesic;
use crate::error::{Error, Result};
use crate::field::{jacobian, Matrix, Vector};
use crate::norms::{DomainBox, FinslerModel};

#[derive(Clone, Copy, Debug)]
pub struct DistanceOptions {
    /// Interior control points of the Bezier family.
    pub control_points: usize,
    /// Simpson intervals for the length integral.
    pub quadrature_intervals: usize,
    pub max_iters: u64,
    pub shooting: bool,
}

impl Default for DistanceOptions {
    fn default() -> Self {
        Self {
            control_points: 8,
            quadrature_intervals: 200,
            max_iters: 150,
            shooting: true,
        }
    }
}

/// Asymmetric distance `d(x, y)`: the infimum of `int F(c')` over curves from
/// `x` to `y` inside the chart.
///
/// On flat models the chart is a box, hence convex, and straight segments
/// are minimizing, so the segment length is returned directly.
pub fn distance(model: &FinslerModel, x: &Vector, y: &Vector, opts: DistanceOptions) -> Result<f64> {
    let dom = model.domain();
    if !dom.contains(x) || !dom.contains(y) {
        return Err(Error::NoConnectingCurve);
    }
    if x == y {
        return Ok(0.0);
    }
    if model.is_flat() {
        return Ok(model.f(x, &(y - x)));
    }
    let problem = LengthProblem {
        model,
        domain: dom,
        start: x,
        end: y,
        interior: opts.control_points,
        intervals: opts.quadrature_intervals.max(2) & !1,
    };
    let fine = LengthProblem {
        intervals: problem.intervals * 16,
        ..problem.clone()
    };
    let degree = opts.control_points + 1;
    let mut seeds: Vec<Vec<f64>> = vec![line_seed(x, y, opts.control_points)];
    let mut best = f64::INFINITY;
    if opts.shooting {
        if let Some((v0, len)) = shoot(model, x, y) {
            best = best.min(len);
            if let Ok(geo) = integrate_geodesic(model, x, &v0, 1.0, 9 * 16) {
                let seed: Vec<f64> = (1..degree)
                    .flat_map(|k| geo.points[k * 16].iter().copied().collect::<Vec<_>>())
                    .collect();
                seeds.push(seed);
            }
        }
    }
    for seed in seeds {
        let seed_len = problem.length(&seed);
        best = best.min(seed_len);
        let solver = LBFGS::new(MoreThuenteLineSearch::new(), 7);
        if let Ok(res) = Executor::new(problem.clone(), solver)
            .configure(|s| s.param(seed).max_iters(opts.max_iters))
            .run()
        {
            if let Some(p) = res.state.best_param.as_ref() {
                // The optimizer can exploit quadrature error, so the final
                // curve is measured again on a much finer rule.
                best = best.min(fine.length(p));
            }
        }
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::NoConnectingCurve)
    }
}

fn line_seed(x: &Vector, y: &Vector, interior: usize) -> Vec<f64> {
    let degree = interior + 1;
    (1..degree)
        .flat_map(|k| {
            let s = k as f64 / degree as f64;
            (x * (1.0 - s) + y * s).iter().copied().collect::<Vec<_>>()
        })
        .collect()
}

/// Newton shooting on the time-one endpoint map. Returns the initial
/// velocity and the geodesic length on success.
fn shoot(model: &FinslerModel, x: &Vector, y: &Vector) -> Option<(Vector, f64)> {
    let endpoint = |v: &Vector| -> Option<Vector> {
        integrate_geodesic(model, x, v, 1.0, 64)
            .ok()
            .map(|g| g.endpoint().clone())
    };
    let mut v = y - x;
    let tol = 1e-10 * (1.0 + y.amax());
    for _ in 0..25 {
        let r = endpoint(&v)? - y;
        if r.amax() <= tol {
            return Some((v.clone(), model.f(x, &v)));
        }
        let h = 1e-5 * (1.0 + v.amax());
        let failed = std::cell::Cell::new(false);
        let jac: Matrix = jacobian(
            |w| {
                endpoint(w).unwrap_or_else(|| {
                    failed.set(true);
                    w.clone()
                })
            },
            &v,
            h,
        );
        if failed.get() {
            return None;
        }
        let step = jac.lu().solve(&r)?;
        v -= step;
    }
    None
}

#[derive(Clone)]
struct LengthProblem<'a> {
    model: &'a FinslerModel,
    domain: &'a DomainBox,
    start: &'a Vector,
    end: &'a Vector,
    interior: usize,
    intervals: usize,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl LengthProblem<'_> {
    fn controls(&self, p: &[f64]) -> Vec<Vector> {
        let n = self.start.len();
        let mut pts = Vec::with_capacity(self.interior + 2);
        pts.push(self.start.clone());
        for k in 0..self.interior {
            let mut c = Vector::from_column_slice(&p[k * n..(k + 1) * n]);
            self.domain.clamp(&mut c);
            pts.push(c);
        }
        pts.push(self.end.clone());
        pts
    }

    fn length(&self, p: &[f64]) -> f64 {
        let pts = self.controls(p);
        let deg = pts.len() - 1;
        let diffs: Vec<Vector> = pts.windows(2).map(|w| (&w[1] - &w[0]) * deg as f64).collect();
        let n_int = self.intervals;
        let h = 1.0 / n_int as f64;
        let mut sum = 0.0;
        for i in 0..=n_int {
            let t = i as f64 * h;
            let mut pos = Vector::zeros(self.start.len());
            for (k, c) in pts.iter().enumerate() {
                pos += c * (binomial(deg, k) * (1.0 - t).powi((deg - k) as i32) * t.powi(k as i32));
            }
            let mut vel = Vector::zeros(self.start.len());
            for (k, d) in diffs.iter().enumerate() {
                vel += d * (binomial(deg - 1, k) * (1.0 - t).powi((deg - 1 - k) as i32) * t.powi(k as i32));
            }
            let w = if i == 0 || i == n_int {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            sum += w * self.model.f(&pos, &vel);
        }
        sum * h / 3.0
    }
}

impl CostFunction for LengthProblem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, ArgminError> {
        Ok(self.length(p))
    }
}

impl Gradient for LengthProblem<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, p: &Vec<f64>) -> std::result::Result<Vec<f64>, ArgminError> {
        let mut q = p.clone();
        let mut g = vec![0.0; p.len()];
        for i in 0..p.len() {
            let h = 1e-6 * (1.0 + p[i].abs());
            q[i] = p[i] + h;
            let plus = self.length(&q);
            q[i] = p[i] - h;
            let minus = self.length(&q);
            q[i] = p[i];
            g[i] = (plus - minus) / (2.0 * h);
        }
        Ok(g)
    }
}
