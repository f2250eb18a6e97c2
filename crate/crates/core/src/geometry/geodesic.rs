use super::spray;
use crate::error::{Error, Result};
use crate::field::{Vector, D1_WEIGHTS};
use crate::norms::FinslerModel;

/// A sampled constant-speed trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Geodesic {
    pub times: Vec<f64>,
    pub points: Vec<Vector>,
    pub velocities: Vec<Vector>,
    /// `F(v)` at the initial sample.
    pub speed: f64,
}

impl Geodesic {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn endpoint(&self) -> &Vector {
        self.points.last().expect("geodesic has samples")
    }

    pub fn end_velocity(&self) -> &Vector {
        self.velocities.last().expect("geodesic has samples")
    }

    /// Largest relative deviation of `F(v_i)` from the initial speed.
    pub fn speed_drift(&self, model: &FinslerModel) -> f64 {
        self.points
            .iter()
            .zip(&self.velocities)
            .map(|(x, v)| (model.f(x, v) - self.speed).abs() / self.speed)
            .fold(0.0, f64::max)
    }

    /// Max over interior samples of `|dv/dt - a(x, v)|`, scaled by `speed^2`.
    ///
    /// The velocity derivative uses the five-point stencil on the recorded
    /// samples, which must be uniformly spaced in time.
    pub fn equation_residual(&self, model: &FinslerModel) -> Result<f64> {
        if self.len() < 5 {
            return Err(Error::invalid("need at least five samples"));
        }
        let dt = self.times[1] - self.times[0];
        let mut worst: f64 = 0.0;
        for i in 2..self.len() - 2 {
            let mut dv = Vector::zeros(self.points[i].len());
            for (k, w) in D1_WEIGHTS.iter().enumerate() {
                if *w != 0.0 {
                    dv += &self.velocities[i + k - 2] * *w;
                }
            }
            dv /= dt;
            let a = spray(model, &self.points[i], &self.velocities[i])?;
            worst = worst.max((dv - a).amax());
        }
        Ok(worst / (self.speed * self.speed))
    }
}

fn rk4_step(model: &FinslerModel, x: &Vector, v: &Vector, dt: f64) -> Result<(Vector, Vector)> {
    let a1 = spray(model, x, v)?;
    let x2 = x + v * (0.5 * dt);
    let v2 = v + &a1 * (0.5 * dt);
    let a2 = spray(model, &x2, &v2)?;
    let x3 = x + &v2 * (0.5 * dt);
    let v3 = v + &a2 * (0.5 * dt);
    let a3 = spray(model, &x3, &v3)?;
    let x4 = x + &v3 * dt;
    let v4 = v + &a3 * dt;
    let a4 = spray(model, &x4, &v4)?;
    let xn = x + (v + &v2 * 2.0 + &v3 * 2.0 + &v4) * (dt / 6.0);
    let vn = v + (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (dt / 6.0);
    Ok((xn, vn))
}

/// Fixed-step RK4 flow without domain checks; negative `t` integrates backwards.
pub fn flow(model: &FinslerModel, x: &Vector, v: &Vector, t: f64, steps: usize) -> Result<(Vector, Vector)> {
    if model.is_flat() {
        return Ok((x + v * t, v.clone()));
    }
    let dt = t / steps as f64;
    let (mut x, mut v) = (x.clone(), v.clone());
    for _ in 0..steps {
        let (xn, vn) = rk4_step(model, &x, &v, dt)?;
        x = xn;
        v = vn;
    }
    Ok((x, v))
}

fn trajectory(model: &FinslerModel, x0: &Vector, v0: &Vector, t_end: f64, steps: usize) -> Result<Geodesic> {
    let dt = t_end / steps as f64;
    let mut geo = Geodesic {
        times: vec![0.0],
        points: vec![x0.clone()],
        velocities: vec![v0.clone()],
        speed: model.f(x0, v0),
    };
    let (mut x, mut v) = (x0.clone(), v0.clone());
    for k in 1..=steps {
        let (xn, vn) = rk4_step(model, &x, &v, dt)?;
        if !model.domain().contains(&xn) {
            return Err(Error::DomainExit { partial: Box::new(geo) });
        }
        x = xn;
        v = vn;
        geo.times.push(k as f64 * dt);
        geo.points.push(x.clone());
        geo.velocities.push(v.clone());
    }
    Ok(geo)
}

const MAX_REFINEMENTS: usize = 12;

/// RK4 geodesic from `(x0, v0)` over `[0, t_end]`.
///
/// The step count starts at `steps` and doubles until the relative speed
/// drift is at most `1e-6 * t_end`.
pub fn integrate_geodesic(
    model: &FinslerModel,
    x0: &Vector,
    v0: &Vector,
    t_end: f64,
    steps: usize,
) -> Result<Geodesic> {
    if steps < 16 {
        return Err(Error::invalid("at least 16 steps are required"));
    }
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(Error::invalid("integration time must be positive and finite"));
    }
    if x0.len() != model.dim() || v0.len() != model.dim() {
        return Err(Error::invalid("dimension mismatch"));
    }
    if v0.iter().all(|c| *c == 0.0) {
        return Err(Error::ZeroSection);
    }
    if !model.domain().contains(x0) {
        return Err(Error::invalid("initial point outside the chart domain"));
    }
    let tol = 1e-6 * t_end;
    let mut n = steps;
    let mut last = f64::INFINITY;
    for _ in 0..=MAX_REFINEMENTS {
        let geo = trajectory(model, x0, v0, t_end, n)?;
        last = geo.speed_drift(model);
        if last <= tol {
            return Ok(geo);
        }
        n *= 2;
    }
    Err(Error::NumericalFailure {
        what: "geodesic speed conservation".into(),
        best: last,
        residual: last,
    })
}
