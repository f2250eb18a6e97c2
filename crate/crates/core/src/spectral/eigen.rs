use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::discrete::{DiscreteField, GridInterpolant};
use super::grid::Grid;
use super::weak::WeakForm;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::measure::WeightedMeasure;
use crate::norms::FinslerModel;

#[derive(Clone, Copy, Debug)]
pub struct EigenOptions {
    /// Iteration budget per cascade level.
    pub max_iter: usize,
    /// Convergence threshold on the quotient change over `window` iterations.
    pub tol: f64,
    pub window: usize,
    /// Fraction of the stable explicit step used for descent.
    pub step_fraction: f64,
    /// Coarsest node count per axis in the cascade.
    pub coarsest_nodes: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            max_iter: 2_000_000,
            tol: 1e-10,
            window: 50,
            step_fraction: 0.4,
            coarsest_nodes: 65,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelSummary {
    pub nodes: usize,
    pub lambda: f64,
    pub iterations: usize,
    pub step: f64,
}

#[derive(Clone, Debug)]
pub struct EigenResult {
    pub lambda: f64,
    /// Zero mean and unit variance under the nodal mass.
    pub eigenfield: DiscreteField,
    /// `M`-weighted norm of `Delta u + lambda u`.
    pub residual: f64,
    /// Iterations on the finest level.
    pub iterations: usize,
    /// Rayleigh quotient per iteration on the finest level.
    pub history: Vec<f64>,
    pub levels: Vec<LevelSummary>,
    pub converged: bool,
}

fn project(form: &WeakForm, u: &mut DiscreteField) -> Result<()> {
    let mean = form.mean(u);
    for v in u.values_mut() {
        *v -= mean;
    }
    let var = form.variance(u);
    if !(var > 0.0 && var.is_finite()) {
        return Err(Error::degenerate("field collapsed to a constant"));
    }
    let s = 1.0 / var.sqrt();
    for v in u.values_mut() {
        *v *= s;
    }
    Ok(())
}

fn orient(u: &mut DiscreteField) {
    if let Some(first) = u.values().iter().find(|v| v.abs() > 0.1) {
        if *first < 0.0 {
            for v in u.values_mut() {
                *v = -*v;
            }
        }
    }
}

struct LevelOutcome {
    field: DiscreteField,
    lambda: f64,
    history: Vec<f64>,
    converged: bool,
    step: f64,
}

/// Projected heat-flow descent on the Rayleigh quotient `2E(u)/Var(u)`.
fn descend(form: &WeakForm, mut u: DiscreteField, opts: &EigenOptions) -> Result<LevelOutcome> {
    project(form, &mut u)?;
    let tau = opts.step_fraction * form.stability_bound();
    let mut history = Vec::new();
    let mut converged = false;
    for k in 0..opts.max_iter {
        let eg = form.energy_gradient(&u)?;
        history.push(2.0 * eg.energy);
        if k >= opts.window && (history[k - opts.window] - history[k]).abs() < opts.tol {
            converged = true;
            break;
        }
        let lap = form.laplacian_from(&eg.gradient);
        for (v, l) in u.values_mut().iter_mut().zip(&lap) {
            *v += tau * l;
        }
        project(form, &mut u)?;
    }
    let lambda = *history.last().expect("at least one iteration");
    Ok(LevelOutcome {
        field: u,
        lambda,
        history,
        converged,
        step: tau,
    })
}

fn residual(form: &WeakForm, u: &DiscreteField, lambda: f64) -> Result<f64> {
    let lap = form.laplacian(u)?;
    let r: Vec<f64> = lap
        .values()
        .iter()
        .zip(u.values())
        .map(|(l, v)| l + lambda * v)
        .collect();
    Ok(form.inner(&r, &r).sqrt())
}

fn cascade(grid: &Grid, coarsest: usize) -> Vec<Arc<Grid>> {
    let mut levels = vec![Arc::new(grid.clone())];
    while levels.len() < 8 {
        match levels.last().expect("nonempty").coarsen(coarsest) {
            Some(g) => levels.push(Arc::new(g)),
            None => break,
        }
    }
    levels.reverse();
    levels
}

/// First nonzero eigenvalue of `-Delta` by a coarse-to-fine cascade of
/// projected heat-flow descents, seeded with uniform noise on the coarsest grid.
pub fn first_eigenvalue(
    model: &FinslerModel,
    measure: &WeightedMeasure,
    grid: &Grid,
    seed: u64,
    opts: EigenOptions,
) -> Result<EigenResult> {
    if !measure.is_normalized() {
        return Err(Error::invalid("the measure must be normalized to mass one"));
    }
    let levels = cascade(grid, opts.coarsest_nodes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coarse = levels[0].clone();
    let init: Vec<f64> = (0..coarse.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let init = DiscreteField::new(coarse, init)?;
    solve_cascade(model, measure, &levels, init, opts)
}

/// Same iteration started from a given field on `grid` (no cascade).
pub fn first_eigenvalue_from(
    model: &FinslerModel,
    measure: &WeightedMeasure,
    initial: DiscreteField,
    opts: EigenOptions,
) -> Result<EigenResult> {
    if !measure.is_normalized() {
        return Err(Error::invalid("the measure must be normalized to mass one"));
    }
    let levels = vec![initial.grid().clone()];
    solve_cascade(model, measure, &levels, initial, opts)
}

fn solve_cascade(
    model: &FinslerModel,
    measure: &WeightedMeasure,
    levels: &[Arc<Grid>],
    init: DiscreteField,
    opts: EigenOptions,
) -> Result<EigenResult> {
    let mut current = init;
    let mut summaries = Vec::new();
    let last = levels.len() - 1;
    for (li, grid) in levels.iter().enumerate() {
        if li > 0 {
            let interp = GridInterpolant::new(current);
            current = DiscreteField::from_fn(grid.clone(), |x| interp.value(x));
        }
        let form = WeakForm::new(model, measure, grid.clone())?;
        let out = descend(&form, current, &opts)?;
        summaries.push(LevelSummary {
            nodes: grid.len(),
            lambda: out.lambda,
            iterations: out.history.len(),
            step: out.step,
        });
        current = out.field;
        if li == last {
            orient(&mut current);
            let result = EigenResult {
                lambda: out.lambda,
                residual: residual(&form, &current, out.lambda)?,
                iterations: out.history.len(),
                eigenfield: current,
                history: out.history,
                levels: summaries,
                converged: out.converged,
            };
            if !result.converged {
                return Err(Error::EigenNotConverged(Box::new(result)));
            }
            return Ok(result);
        }
    }
    unreachable!("cascade has at least one level")
}
