use std::f64::consts::PI;

use ddft_core::nbody::{NBodyDensity, NBodyModel};
use ddft_core::uniq::{
    default_tolerance, energy_identity, lemma_check, lower_order_density_differences, smallest_l, taylor_coefficients, NBodyPair,
};
use ddft_core::{
    BoundaryKind, Error, ExternalDrive, Fpe1Model, Grid1D, PairInteraction, PairKind, Potential, Quantity, ScalarField,
    SpaceProfile, TimeProfile, TimeScheme,
};
use proptest::prelude::*;

fn torus(cells: usize) -> Grid1D {
    Grid1D::new(0.0, 2.0 * PI, cells, BoundaryKind::Periodic).unwrap()
}

#[test]
fn interacting_pair_has_the_same_leading_difference() {
    let g = torus(32);
    let pair = PairInteraction::new(PairKind::GaussianCore { epsilon: 1.0, sigma: 0.5 }, &g).unwrap();
    let v_primed = Potential::single(-1.0, SpaceProfile::Sin, TimeProfile::Power { power: 1 });
    let model = |drive| NBodyModel::ideal(g, 2, drive).with_pair(pair).with_scheme(TimeScheme::Heun);
    let base = model(ExternalDrive::default());
    let primed = model(ExternalDrive::from_potential(v_primed.clone()));
    let p0 = NBodyDensity::product(&vec![1.0; 32], g, 2).unwrap();
    let pair_runs = NBodyPair { base, primed, p0, substeps: 4 };
    let pd = taylor_coefficients(&Potential::zero(), &v_primed, &g, 4).unwrap();
    let l = smallest_l(&pd, default_tolerance(&pd));
    assert_eq!(l, Some(1));
    let check = lemma_check(&pair_runs, &pd, l, 8e-3).unwrap();
    assert!(check.relative_error < 5e-3, "{}", check.relative_error);
    // two particles spread uniformly over 2π give ρ₀ = 1/π; the discrete Laplacian of sin is off by O(dx²)
    let (rho0, dx) = (1.0 / PI, g.dx());
    for (i, r) in check.rhs.iter().enumerate() {
        assert!((r + rho0 * g.cell_center(i).sin()).abs() < rho0 * dx * dx / 12.0 * 1.01);
    }
    let first = lower_order_density_differences(&pair_runs, 1, 8e-3).unwrap();
    assert!(first[0] < 1e-6, "{first:?}");
}

#[test]
fn purely_time_dependent_shift_changes_nothing() {
    let g = Grid1D::new(-3.0, 3.0, 60, BoundaryKind::NoFlux).unwrap();
    let v = Potential::single(1.0, SpaceProfile::Quadratic, TimeProfile::Constant);
    let gauge = Potential::single(4.0, SpaceProfile::Constant, TimeProfile::Power { power: 2 });
    let rho0 = ScalarField::from_fn(g, Quantity::Density, |x| (-(x - 1.0) * (x - 1.0)).exp()).unwrap();
    let a = Fpe1Model::ideal(g, ExternalDrive::from_potential(v.clone()));
    let b = Fpe1Model::ideal(g, ExternalDrive::from_potential(v.plus(&gauge)));
    let dt = 0.9 * a.stability_bound(&rho0, 0.0, None).unwrap();
    let (ra, rb) = (a.run(&rho0, dt, 0.1, 10).unwrap(), b.run(&rho0, dt, 0.1, 10).unwrap());
    // the shift enters only through round-off in sampled potential differences
    for (x, y) in ra.densities.frames().iter().zip(rb.densities.frames()) {
        assert!(x.max_distance(y).unwrap() < 1e-13);
    }
    for (x, y) in ra.currents.frames().iter().zip(rb.currents.frames()) {
        assert!(x.sub(y).unwrap().max_norm() < 1e-12);
    }
    let pd = taylor_coefficients(&v, &v.plus(&gauge), &g, 4).unwrap();
    let l = smallest_l(&pd, default_tolerance(&pd));
    assert_eq!(l, None);
    let pair = ddft_core::uniq::Fpe1Pair { base: a, primed: b, rho0, substeps: 1 };
    assert!(matches!(lemma_check(&pair, &pd, l, 1e-3), Err(Error::NoOrder)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smallest_order_is_the_time_power(k in 0u32..=4, a in 0.1..5.0f64, space in prop_oneof![Just(SpaceProfile::Linear), Just(SpaceProfile::Sin), Just(SpaceProfile::Quadratic)]) {
        let g = Grid1D::new(-1.0, 2.0, 40, BoundaryKind::NoFlux).unwrap();
        let time = if k == 0 { TimeProfile::Constant } else { TimeProfile::Power { power: k } };
        let d = Potential::single(a, space, time);
        let pd = taylor_coefficients(&Potential::zero(), &d, &g, 4).unwrap();
        prop_assert_eq!(smallest_l(&pd, default_tolerance(&pd)), Some(k as usize));
        let flat = Potential::single(a, SpaceProfile::Constant, time);
        let pd = taylor_coefficients(&Potential::zero(), &flat, &g, 4).unwrap();
        prop_assert_eq!(smallest_l(&pd, default_tolerance(&pd)), None);
    }

    #[test]
    fn energy_identity_balances(
        rho in prop::collection::vec(0.01..3.0f64, 8..40),
        coeffs in (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64),
        periodic in any::<bool>(),
    ) {
        let bc = if periodic { BoundaryKind::Periodic } else { BoundaryKind::NoFlux };
        let g = Grid1D::new(0.0, 2.0 * PI, rho.len(), bc).unwrap();
        let rho = ScalarField::new(g, Quantity::Density, rho).unwrap();
        let (a, b, c) = coeffs;
        let d = ScalarField::from_fn(g, Quantity::Potential, |x| a * x.sin() + b * (2.0 * x).cos() + c * (3.0 * x).sin()).unwrap();
        let e = energy_identity(&rho, &d).unwrap();
        prop_assert!(e.imbalance() <= 1e-10 * e.lhs.abs().max(1.0));
        prop_assert_eq!(e.boundary, 0.0);
        if d.max_norm() > 1e-3 {
            prop_assert!(e.lhs < 0.0);
        }
    }
}
