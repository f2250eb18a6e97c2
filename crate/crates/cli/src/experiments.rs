//! One runner per experiment. Each returns its checks and plotted series;
//! the driver owns all file output.

use std::f64::consts::PI;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use finsler_core::geometry::{distance, integrate_geodesic, DistanceOptions};
use finsler_core::inequalities::{gaussian_profile, log_sobolev_deficit};
use finsler_core::needles::{
    classify_equality_needle, needle_isoperimetric_minimum, needle_logsobolev_deficit, needle_poincare, BoundaryShape,
    Needle,
};
use finsler_core::norms::unit_directions;
use finsler_core::rigidity::{
    affine_check, berwald_split_check, build_product_model, corollary_stages, factor_isometry_residual,
    splitting_check, Corollary, CrossSection, GridSpec as ProductGrid, ProductModel, SplitReport,
};
use finsler_core::spectral::{first_eigenvalue, line_grid, DiscreteField, EigenOptions, Grid, WeakForm};
use finsler_core::{DomainBox, FinslerModel, Vector, WeightedMeasure};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{CorollaryKind, Experiment, ExperimentConfig, ModelKind};
use crate::report::{Check, Relation, Series};

pub struct Outcome {
    pub checks: Vec<Check>,
    pub series: Vec<Series>,
}

/// Check names per experiment, in report order. Tolerance overrides must
/// name one of these.
pub fn check_names(experiment: Experiment) -> &'static [&'static str] {
    match experiment {
        Experiment::CoreChecks => &[
            "homogeneity",
            "strong_convexity",
            "legendre_roundtrip",
            "dual_norm_identity",
            "forward_distance",
            "backward_distance",
            "reversibility_constant",
        ],
        Experiment::Eigen => &["gap_shortfall", "lambda_error", "eigenfield_correlation", "converged"],
        Experiment::Needle => &[
            "curvature_shortfall",
            "gap_shortfall",
            "lambda_error",
            "equality_classification",
        ],
        Experiment::Rigidity => &[
            "lambda_error",
            "hessian_max",
            "gradnorm_std",
            "ricci_gap",
            "psi_residual",
            "gaussian_fit",
            "refinement_order",
            "technical_norm",
            "witness_residual",
            "affine_residual",
            "gamma_block_residual",
            "geodesic_projection_residual",
            "cross_ricci",
            "factor_isometry",
        ],
        Experiment::Isoperimetric => &[
            "profile_value",
            "profile_shortfall",
            "half_line_error",
            "interval_margin",
        ],
        Experiment::LogSobolev => &["random_shortfall", "tilt_equality"],
        Experiment::Corollary => &[
            "ambient_equality",
            "disintegration",
            "needle_equality",
            "needle_classification",
            "poincare_equality",
        ],
    }
}

struct Checks<'a> {
    config: &'a ExperimentConfig,
    list: Vec<Check>,
}

impl<'a> Checks<'a> {
    fn new(config: &'a ExperimentConfig) -> Self {
        Self {
            config,
            list: Vec::new(),
        }
    }

    fn add(&mut self, name: &'static str, value: f64, relation: Relation, default: f64) {
        debug_assert!(check_names(self.config.experiment).contains(&name), "{name}");
        let tol = self.config.tolerances.get(name).copied().unwrap_or(default);
        self.list.push(Check::new(name, value, relation, tol));
    }

    fn at_most(&mut self, name: &'static str, value: f64, default: f64) {
        self.add(name, value, Relation::AtMost, default);
    }

    fn at_least(&mut self, name: &'static str, value: f64, default: f64) {
        self.add(name, value, Relation::AtLeast, default);
    }
}

pub fn run(config: &ExperimentConfig) -> Result<Outcome> {
    match config.experiment {
        Experiment::CoreChecks => core_checks(config),
        Experiment::Eigen => eigen(config),
        Experiment::Needle => needle(config),
        Experiment::Rigidity => rigidity(config),
        Experiment::Isoperimetric => isoperimetric(config),
        Experiment::LogSobolev => log_sobolev(config),
        Experiment::Corollary => corollary(config),
    }
}

fn curvature(config: &ExperimentConfig) -> f64 {
    config.model.curvature
}

fn nodes(config: &ExperimentConfig) -> &[usize] {
    &config.grid.as_ref().expect("validated grid").nodes
}

/// A line model as a needle: Gaussian or quartic potential on `[-R, R]`.
fn line_needle(config: &ExperimentConfig) -> Result<Needle> {
    let k = curvature(config);
    let sigmas = config.grid.as_ref().and_then(|g| g.truncation).unwrap_or(8.0);
    let radius = sigmas / k.sqrt();
    let n = nodes(config)[0];
    let s = match config.model.kind {
        ModelKind::GaussianLine => 0.0,
        _ => config.model.parameter("quartic", 0.0),
    };
    Ok(Needle::new(-radius, radius, n, move |t| {
        0.5 * k * t * t + s * t.powi(4)
    })?)
}

fn is_gaussian(config: &ExperimentConfig) -> bool {
    config.model.kind == ModelKind::GaussianLine
}

fn product(config: &ExperimentConfig) -> Result<ProductModel> {
    let n = nodes(config);
    let length = config.model.parameter("length", 2.0 * PI);
    let cross = match config.model.kind {
        ModelKind::CircleProduct => CrossSection::Circle { length },
        ModelKind::TorusProduct => CrossSection::MinkowskiTorus {
            length,
            weight: config.model.parameter("weight", 0.2),
        },
        other => bail!("{} is not a product model", other.name()),
    };
    let spec = ProductGrid {
        cross_nodes: n[0],
        line_nodes: *n.last().expect("validated grid"),
    };
    Ok(build_product_model(cross, curvature(config), spec)?)
}

fn core_checks(config: &ExperimentConfig) -> Result<Outcome> {
    let b = config.model.parameter("drift", 0.5);
    let mut model = FinslerModel::randers_minkowski(Vector::from_vec(vec![b, 0.0]))?;
    if let Some(dom) = &config.model.domain {
        model = model.with_domain(DomainBox::new(dom.lo.clone(), dom.hi.clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.unwrap_or(0));
    let x = Vector::zeros(2);
    let (mut homogeneity, mut convexity, mut roundtrip, mut duality) = (0.0f64, f64::INFINITY, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let v = Vector::from_fn(2, |_, _| rng.gen_range(-3.0..3.0));
        let c: f64 = rng.gen_range(0.01..100.0);
        let f = model.norm(&x, &v)?;
        homogeneity = homogeneity.max((model.norm(&x, &(&v * c))? - c * f).abs() / (c * f));
        convexity = convexity.min(model.fundamental_tensor(&x, &v)?.min_eigenvalue());
        let p = model.momentum(&x, &v);
        let back = model.legendre(&x, &p)?;
        roundtrip = roundtrip.max((back - &v).amax() / v.amax());
        duality = duality.max((model.dual_norm(&x, &p)? - f).abs() / f);
    }
    let (o, e1) = (Vector::zeros(2), Vector::from_vec(vec![1.0, 0.0]));
    let forward = distance(&model, &o, &e1, DistanceOptions::default())?;
    let backward = distance(&model, &e1, &o, DistanceOptions::default())?;
    let sample: Vec<Vector> = DomainBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).sample_points(3, 1.0);
    let lambda = model.reversibility_on(&sample, 720)?;

    let mut checks = Checks::new(config);
    checks.at_most("homogeneity", homogeneity, 1e-12);
    checks.at_least("strong_convexity", convexity, 1e-6);
    checks.at_most("legendre_roundtrip", roundtrip, 1e-8);
    checks.at_most("dual_norm_identity", duality, 1e-8);
    checks.at_most("forward_distance", (forward - (1.0 + b)).abs(), 1e-6);
    checks.at_most("backward_distance", (backward - (1.0 - b)).abs(), 1e-6);
    checks.at_most("reversibility_constant", (lambda - (1.0 + b) / (1.0 - b)).abs(), 1e-6);

    let mut indicatrix = Series::new("indicatrix.csv", &["angle", "norm", "reversed_norm", "dual_norm"]);
    for (j, v) in unit_directions(2, 360).into_iter().enumerate() {
        let angle = 2.0 * PI * j as f64 / 360.0;
        indicatrix.push(vec![
            angle,
            model.f(&x, &v),
            model.f(&x, &-&v),
            model.dual_norm(&x, &v)?,
        ]);
    }
    Ok(Outcome {
        checks: checks.list,
        series: vec![indicatrix],
    })
}

fn eigen_setup(config: &ExperimentConfig) -> Result<(FinslerModel, WeightedMeasure, Arc<Grid>)> {
    if config.model.kind.is_product() {
        let pm = product(config)?;
        Ok((pm.model, pm.measure, pm.grid))
    } else if is_gaussian(config) {
        let k = curvature(config);
        let sigmas = config.grid.as_ref().and_then(|g| g.truncation).unwrap_or(8.0);
        let radius = sigmas / k.sqrt();
        let grid = line_grid(radius, nodes(config)[0]);
        let dom = DomainBox::new(vec![-radius], vec![radius]);
        let measure = WeightedMeasure::gaussian(dom.clone(), k, vec![0]).normalized_on(&grid);
        Ok((FinslerModel::euclidean(1).with_domain(dom), measure, grid))
    } else {
        let form = line_needle(config)?.weak_form()?;
        Ok((form.model().clone(), form.measure().clone(), form.grid().clone()))
    }
}

/// Mass-weighted correlation of `u` with the line coordinate.
fn line_correlation(form: &WeakForm, u: &DiscreteField) -> f64 {
    let grid = form.grid();
    let axis = grid.dim() - 1;
    let t: Vec<f64> = (0..grid.len()).map(|i| grid.point(i)[axis]).collect();
    let m = form.mass();
    let total: f64 = m.iter().sum();
    let mean = |v: &[f64]| v.iter().zip(m).map(|(a, w)| a * w).sum::<f64>() / total;
    let (mu, mt) = (mean(u.values()), mean(&t));
    let mut cov = 0.0;
    let mut vu = 0.0;
    let mut vt = 0.0;
    for ((a, b), w) in u.values().iter().zip(&t).zip(m) {
        cov += w * (a - mu) * (b - mt);
        vu += w * (a - mu) * (a - mu);
        vt += w * (b - mt) * (b - mt);
    }
    cov / (vu * vt).sqrt()
}

fn eigen(config: &ExperimentConfig) -> Result<Outcome> {
    let k = curvature(config);
    let (model, measure, grid) = eigen_setup(config)?;
    let seed = config.seed.expect("validated seed");
    let res = first_eigenvalue(&model, &measure, &grid, seed, EigenOptions::default())?;
    let form = WeakForm::new(&model, &measure, grid.clone())?;
    let corr = line_correlation(&form, &res.eigenfield).abs();

    let mut checks = Checks::new(config);
    checks.at_most("gap_shortfall", (k - res.lambda).max(0.0), 1e-3);
    if is_gaussian(config) || config.model.kind.is_product() {
        checks.at_most("lambda_error", (res.lambda - k).abs(), 1e-3);
        checks.at_least("eigenfield_correlation", corr, 0.999);
    }
    checks.at_least("converged", if res.converged { 1.0 } else { 0.0 }, 1.0);

    let mut quotient = Series::new("rayleigh_quotient.csv", &["iteration", "rayleigh_quotient"]);
    for (i, q) in res.history.iter().enumerate() {
        quotient.push(vec![i as f64, *q]);
    }
    let mut levels = Series::new("levels.csv", &["nodes", "spacing", "lambda", "iterations"]);
    let mut spacing = grid.axis(grid.dim() - 1).spacing() * 2f64.powi(res.levels.len() as i32 - 1);
    for level in &res.levels {
        levels.push(vec![level.nodes as f64, spacing, level.lambda, level.iterations as f64]);
        spacing /= 2.0;
    }
    Ok(Outcome {
        checks: checks.list,
        series: vec![quotient, levels],
    })
}

fn needle(config: &ExperimentConfig) -> Result<Outcome> {
    let k = curvature(config);
    let needle = line_needle(config)?;
    let spectrum = needle_poincare(&needle, k)?;
    let class = classify_equality_needle(&needle, k, 1e-6);

    let mut checks = Checks::new(config);
    checks.at_most(
        "curvature_shortfall",
        (k - needle.curvature_lower_bound()).max(0.0),
        1e-8,
    );
    checks.at_most("gap_shortfall", (-spectrum.deficit).max(0.0), 1e-3);
    if is_gaussian(config) {
        checks.at_most("lambda_error", spectrum.deficit.abs(), 1e-3);
    }
    // Equality is classified correctly when it is detected exactly on the Gaussian.
    let correct = class.is_gaussian == is_gaussian(config);
    checks.at_least("equality_classification", if correct { 1.0 } else { 0.0 }, 1.0);

    let mut eigenfunction = Series::new("needle_eigenfunction.csv", &["t", "eigenfunction", "density"]);
    for (t, u) in needle.nodes().iter().zip(&spectrum.eigenfunction) {
        eigenfunction.push(vec![*t, *u, needle.density(*t)]);
    }
    Ok(Outcome {
        checks: checks.list,
        series: vec![eigenfunction],
    })
}

const THETAS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

fn isoperimetric(config: &ExperimentConfig) -> Result<Outcome> {
    let k = curvature(config);
    let needle = line_needle(config)?;
    let mut shortfall: f64 = 0.0;
    for theta in THETAS {
        let min = needle_isoperimetric_minimum(&needle, theta, k)?;
        shortfall = shortfall.max(min.profile - min.content);
    }
    let mut checks = Checks::new(config);
    checks.at_most(
        "profile_value",
        (gaussian_profile(k, 0.5)? - (k / (2.0 * PI)).sqrt()).abs(),
        1e-6,
    );
    checks.at_most("profile_shortfall", shortfall.max(0.0), 1e-3);
    if is_gaussian(config) {
        let q = needle.quantile(0.5)?;
        let half_line = needle.density(q);
        checks.at_most("half_line_error", (half_line - gaussian_profile(k, 0.5)?).abs(), 1e-4);
        // The best interval of mass 1/2 centered at the mode.
        let (l, r) = (needle.quantile(0.25)?, needle.quantile(0.75)?);
        checks.at_least(
            "interval_margin",
            needle.density(l) + needle.density(r) - half_line,
            1e-6,
        );
    }

    let mut profile = Series::new("profile.csv", &["theta", "profile", "needle_content", "interval"]);
    for j in 1..50 {
        let theta = j as f64 / 50.0;
        let min = needle_isoperimetric_minimum(&needle, theta, k)?;
        let interval = if min.shape == BoundaryShape::Interval { 1.0 } else { 0.0 };
        profile.push(vec![theta, min.profile, min.content, interval]);
    }
    Ok(Outcome {
        checks: checks.list,
        series: vec![profile],
    })
}

fn log_sobolev(config: &ExperimentConfig) -> Result<Outcome> {
    let k = curvature(config);
    let needle = line_needle(config)?;
    let sk = k.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.unwrap_or(0));
    let mut shortfall: f64 = 0.0;
    for _ in 0..20 {
        let c: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let rho = move |t: f64| {
            (c[0] * sk * t + c[1] * (sk * t).sin() + c[2] * (2.0 * sk * t).cos() + c[3] * (0.5 * sk * t).tanh()).exp()
        };
        let rep = needle_logsobolev_deficit(&needle, rho, k)?;
        shortfall = shortfall.max(-rep.deficit);
    }
    let mut tilt = Series::new("tilt_deficit.csv", &["tilt", "deficit"]);
    let mut worst_tilt: f64 = 0.0;
    let form = needle.weak_form()?;
    for j in 0..=20 {
        let a = -1.0 + 0.1 * j as f64;
        let rho = DiscreteField::from_fn(form.grid().clone(), |x| (a * sk * x[0] - 0.5 * a * a).exp());
        let rep = log_sobolev_deficit(&form, &rho, k)?;
        worst_tilt = worst_tilt.max(rep.deficit.abs());
        tilt.push(vec![a, rep.deficit]);
    }
    let mut checks = Checks::new(config);
    checks.at_most("random_shortfall", shortfall.max(0.0), 1e-3);
    if is_gaussian(config) {
        checks.at_most("tilt_equality", worst_tilt, 1e-3);
    }
    Ok(Outcome {
        checks: checks.list,
        series: vec![tilt],
    })
}

fn corollary(config: &ExperimentConfig) -> Result<Outcome> {
    let pm = product(config)?;
    let spec = config.corollary.as_ref().expect("validated corollary");
    let kind = match spec.kind {
        CorollaryKind::LogSobolev => Corollary::LogSobolev,
        CorollaryKind::Isoperimetric => Corollary::Isoperimetric {
            theta: spec.theta.unwrap_or(0.5),
        },
    };
    let report = corollary_stages(kind, &pm, curvature(config), 1e-3)?;
    let mut checks = Checks::new(config);
    let mut stages = Series::new("stages.csv", &["stage", "value", "tolerance"]);
    for (i, stage) in report.stages.iter().enumerate() {
        let name = check_names(Experiment::Corollary)
            .iter()
            .find(|n| **n == stage.stage)
            .with_context(|| format!("unexpected stage {}", stage.stage))?;
        checks.at_most(name, stage.value, stage.tolerance);
        stages.push(vec![i as f64 + 1.0, stage.value, stage.tolerance]);
    }
    Ok(Outcome {
        checks: checks.list,
        series: vec![stages],
    })
}

/// Stopping rule for the refinement study. The default rule leaves an
/// iteration error that hides the discretization error on the finer grid.
pub fn refinement_options() -> EigenOptions {
    EigenOptions {
        tol: 1e-15,
        window: 500,
        coarsest_nodes: 17,
        ..EigenOptions::default()
    }
}

/// Residuals below this are roundoff on every grid and are not expected to
/// shrink further.
pub const ROUNDOFF_FLOOR: f64 = 1e-10;

/// Smallest observed order `log2(coarse / fine)` over residuals whose
/// coarse value is above the roundoff floor; `None` when all are at the floor.
pub fn observed_order(coarse: &SplitReport, fine: &SplitReport) -> Option<f64> {
    coarse
        .residuals()
        .iter()
        .zip(fine.residuals())
        .filter(|(c, _)| c.1 > ROUNDOFF_FLOOR)
        .map(|(c, f)| (c.1 / f.1.max(f64::MIN_POSITIVE)).log2())
        .reduce(f64::min)
}

fn rigidity(config: &ExperimentConfig) -> Result<Outcome> {
    let k = curvature(config);
    let pm = product(config)?;
    let seed = config.seed.expect("validated seed");
    let mut checks = Checks::new(config);
    let mut refinement = Series::new(
        "refinement.csv",
        &[
            "spacing",
            "lambda",
            "hessian_max",
            "gradnorm_std",
            "ricci_gap",
            "psi_residual",
            "gaussian_fit",
        ],
    );
    if pm.cross.dim() == 1 {
        let mut reports = Vec::new();
        let mut lambdas = Vec::new();
        for level in [pm.clone(), pm.refined()?] {
            let res = first_eigenvalue(&level.model, &level.measure, &level.grid, seed, refinement_options())?;
            let rep = splitting_check(&level.model, &level.measure, &res.eigenfield, k)?;
            let h = level.grid.axis(level.line_axis()).spacing();
            refinement.push(vec![
                h,
                res.lambda,
                rep.hessian_max,
                rep.gradnorm_std,
                rep.ricci_gap,
                rep.psi_residual,
                rep.gaussian_fit,
            ]);
            reports.push(rep);
            lambdas.push(res.lambda);
        }
        let fine = &reports[1];
        checks.at_most("lambda_error", (lambdas[1] - k).abs(), 1e-3);
        for (name, value) in fine.residuals() {
            let name = check_names(Experiment::Rigidity)
                .iter()
                .find(|n| **n == name)
                .expect("residual names are check names");
            checks.at_most(name, value, 1e-2);
        }
        checks.at_least(
            "refinement_order",
            observed_order(&reports[0], fine).unwrap_or(f64::INFINITY),
            1.0,
        );
        checks.at_most("technical_norm", fine.technical_norm, 1e-6);
    }
    let witness = splitting_check(&pm.model, &pm.measure, &pm.candidate(), k)?;
    checks.at_most("witness_residual", witness.max_residual(), 1e-4);

    let line = pm.line_axis();
    let u = move |x: &Vector| x[line];
    let d = pm.dim();
    let mut start = Vector::from_element(d, 1.0);
    start[line] = -1.0;
    let mut geodesics = Vec::new();
    for v in unit_directions(d, 4) {
        geodesics.push(integrate_geodesic(&pm.model, &start, &v, 2.0, 32)?);
    }
    checks.at_most("affine_residual", affine_check(&pm.model, &u, &geodesics)?, 1e-4);

    let n = pm.grid.len();
    let sample: Vec<Vector> = (0..5).map(|j| pm.grid.point((j * n / 5 + n / 10) % n)).collect();
    let split = berwald_split_check(&pm.model, &u, &sample)?;
    checks.at_most("gamma_block_residual", split.gamma_block_residual, 1e-6);
    checks.at_most("geodesic_projection_residual", split.geodesic_projection_residual, 1e-4);
    checks.at_least("cross_ricci", split.cross_ricci_min, -1e-9);
    let m = pm.cross.dim();
    let pairs = vec![
        (Vector::from_element(m, 0.5), Vector::from_element(m, 1.7)),
        (Vector::from_element(m, 3.0), Vector::from_element(m, 2.2)),
    ];
    checks.at_most(
        "factor_isometry",
        factor_isometry_residual(&pm.model, &pairs, &[-2.0, 0.0, 1.5])?,
        1e-4,
    );
    Ok(Outcome {
        checks: checks.list,
        series: vec![refinement],
    })
}
