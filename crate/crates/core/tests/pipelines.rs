//! Flows that cross module boundaries.

use std::f64::consts::PI;

use finsler_core::geometry::{distance, DistanceOptions};
use finsler_core::inequalities::poincare_deficit;
use finsler_core::needles::{classify_equality_needle, make_gaussian_needle, needle_poincare};
use finsler_core::rigidity::{
    build_product_model, corollary_pipeline, Corollary, CrossSection, GridSpec, ProductModel,
};
use finsler_core::spectral::DiscreteField;
use finsler_core::{Error, FinslerModel, Vector};

fn circle_product(k: f64) -> ProductModel {
    build_product_model(
        CrossSection::Circle { length: 2.0 * PI },
        k,
        GridSpec {
            cross_nodes: 16,
            line_nodes: 129,
        },
    )
    .unwrap()
}

#[test]
fn product_needles_are_gaussian_with_sharp_gap() {
    let k = 0.5;
    let dec = circle_product(k).decomposition().unwrap();
    assert_eq!(dec.needles().len(), 16);
    for needle in dec.needles() {
        let class = classify_equality_needle(needle, k, 1e-6);
        assert!(class.is_gaussian, "{class:?}");
        assert!(class.center.abs() < 1e-6);
        let spectrum = needle_poincare(needle, k).unwrap();
        assert!(spectrum.deficit.abs() < 1e-3, "{}", spectrum.deficit);
    }
}

#[test]
fn poincare_holds_for_smooth_fields_on_the_product() {
    let k = 0.5;
    let pm = circle_product(k);
    let form = pm.weak_form().unwrap();
    let fields: [fn(&Vector) -> f64; 3] = [
        |x| x[0].sin() * x[1],
        |x| (0.3 * x[1]).tanh() + x[0].cos(),
        |x| x[1] * x[1] - 2.0,
    ];
    for f in fields {
        let u = DiscreteField::from_fn(pm.grid.clone(), f);
        let rep = poincare_deficit(&form, &u, k).unwrap();
        assert!(rep.deficit > -1e-3, "{rep:?}");
    }
    // The line coordinate is the equality case.
    let rep = poincare_deficit(&form, &pm.line_coordinate(), k).unwrap();
    assert!(rep.deficit.abs() < 1e-3, "{rep:?}");
}

#[test]
fn wrong_curvature_stops_the_pipeline_at_a_named_stage() {
    let pm = circle_product(0.5);
    match corollary_pipeline(Corollary::LogSobolev, &pm, 0.8, 1e-3) {
        Err(Error::StageFailed {
            stage,
            value,
            tolerance,
        }) => {
            assert!(!stage.is_empty());
            assert!(value > tolerance);
        }
        other => panic!("expected a failed stage, got {other:?}"),
    }
}

#[test]
fn reversed_randers_swaps_distances() {
    let model = FinslerModel::randers_minkowski(Vector::from_vec(vec![0.3, -0.2])).unwrap();
    let rev = model.reversed();
    let (a, b) = (Vector::from_vec(vec![0.2, 0.1]), Vector::from_vec(vec![-0.7, 0.9]));
    let opts = DistanceOptions::default();
    let forward = distance(&model, &a, &b, opts).unwrap();
    let swapped = distance(&rev, &b, &a, opts).unwrap();
    assert!((forward - swapped).abs() < 1e-6, "{forward} vs {swapped}");
    assert!((forward - distance(&model, &b, &a, opts).unwrap()).abs() > 1e-3);
}

#[test]
fn heat_flow_lowers_needle_energy() {
    let form = make_gaussian_needle(1.0, 8.0, 401).unwrap().weak_form().unwrap();
    let mut u = DiscreteField::from_fn(form.grid().clone(), |x| (x[0]).sin() + 0.2 * x[0] * x[0]);
    let tau = 0.5 * form.stability_bound();
    let mut last = form.energy(&u).unwrap();
    for _ in 0..20 {
        u = form.heat_step(&u, tau).unwrap();
        let e = form.energy(&u).unwrap();
        assert!(e <= last + 1e-14, "{e} > {last}");
        last = e;
    }
}
