use ddft_core::fields::cell_averages;
use ddft_core::fpe1::{continuity_residual, equilibrium_density};
use ddft_core::loophole::dv_face_gradient;
use ddft_core::{
    BoundaryKind, Error, ExternalDrive, Fpe1Model, Fpe1State, Grid1D, Potential, Quantity, ScalarField, SpaceProfile,
    TimeProfile,
};
use proptest::prelude::*;

fn stat(a: f64, s: SpaceProfile) -> Potential {
    Potential::single(a, s, TimeProfile::Constant)
}

fn heat_kernel(x: f64, t: f64) -> f64 {
    (-x * x / (4.0 * t)).exp() / (4.0 * std::f64::consts::PI * t).sqrt()
}

fn free_diffusion_error(cells: usize) -> f64 {
    let g = Grid1D::new(-10.0, 10.0, cells, BoundaryKind::NoFlux).unwrap();
    let t0 = 0.25;
    let rho0 = ScalarField::new(g, Quantity::Density, cell_averages(&g, |x| heat_kernel(x, t0))).unwrap();
    let m = Fpe1Model::ideal(g, ExternalDrive::default());
    let dt = 0.5 * m.stability_bound(&rho0, 0.0, None).unwrap();
    let run = m.run(&rho0, dt, 0.25, 1_000_000).unwrap();
    let exact = cell_averages(&g, |x| heat_kernel(x, 2.0 * t0));
    let (_, last) = run.densities.last().unwrap();
    last.values().iter().zip(&exact).fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()))
}

#[test]
fn free_diffusion_converges_at_second_order() {
    let coarse = free_diffusion_error(100);
    let fine = free_diffusion_error(200);
    assert!(coarse / fine > 3.5, "{coarse:e} {fine:e}");
}

#[test]
fn harmonic_equilibrium_is_stationary_with_vanishing_residual() {
    let g = Grid1D::new(-5.0, 5.0, 200, BoundaryKind::NoFlux).unwrap();
    let drive = ExternalDrive::from_potential(stat(1.0, SpaceProfile::Quadratic));
    let rho = equilibrium_density(&g, &drive, 1.0, 1.0).unwrap();
    let m = Fpe1Model::ideal(g, drive);
    assert!(m.current(&rho, 0.0).unwrap().max_norm() < 1e-12);
    let run = m.run(&rho, m.stability_bound(&rho, 0.0, None).unwrap(), 0.05, 10).unwrap();
    assert!(continuity_residual(&m, &run.densities).unwrap().max() < 1e-8);
}

#[test]
fn loophole_force_gives_uniform_current() {
    let g = Grid1D::new(-3.0, 3.0, 240, BoundaryKind::NoFlux).unwrap();
    let rho = ScalarField::from_fn(g, Quantity::Density, |x| (-x * x).exp()).unwrap();
    let m = Fpe1Model::ideal(g, ExternalDrive::from_potential(stat(1.0, SpaceProfile::Quadratic)));
    let c0 = 0.7;
    let (grad, floored) = dv_face_gradient(&rho, c0, 1e-10);
    assert_eq!(floored, 0);
    let extra: Vec<f64> = grad.iter().map(|g| -g).collect();
    let j = m.current_with(&rho, 0.0, Some(&extra)).unwrap();
    for v in &j.values()[1..240] {
        assert!((v + c0).abs() < 1e-12, "{v}");
    }
}

#[test]
fn oversized_step_is_refused() {
    let g = Grid1D::new(0.0, 1.0, 16, BoundaryKind::NoFlux).unwrap();
    let rho = ScalarField::constant(g, Quantity::Density, 1.0).unwrap();
    let m = Fpe1Model::ideal(g, ExternalDrive::default().with_drift(-1.0));
    let state = Fpe1State::new(rho);
    assert!(m.fpe_step(&state, m.stability_bound(&state.rho, 0.0, None).unwrap()).is_ok());
    assert!(matches!(m.fpe_step(&state, 1.0), Err(Error::StepTooLarge { .. })));
}

fn smooth_drive() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.0..2.0f64, -1.0..1.0f64, -1.0..1.0f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mass_is_conserved_and_density_stays_non_negative(
        init in prop::collection::vec(0.0..2.0f64, 24),
        (a, b, r) in smooth_drive(),
        periodic in any::<bool>(),
    ) {
        prop_assume!(init.iter().any(|&v| v > 0.1));
        let bc = if periodic { BoundaryKind::Periodic } else { BoundaryKind::NoFlux };
        let g = Grid1D::new(0.0, 2.0 * std::f64::consts::PI, 24, bc).unwrap();
        let v = stat(a, SpaceProfile::Cos).plus(&stat(b, SpaceProfile::Sin));
        let m = Fpe1Model::ideal(g, ExternalDrive::from_potential(v).with_drift(r));
        let rho0 = ScalarField::new(g, Quantity::Density, init).unwrap();
        let dt = 0.9 * m.stability_bound(&rho0, 0.0, None).unwrap();
        let run = m.run(&rho0, dt, 300.0 * dt, 100).unwrap();
        prop_assert!(run.mass_drift < 1e-12);
        prop_assert!(run.min_density >= -1e-12);
    }

    #[test]
    fn boltzmann_profile_is_a_fixed_point((a, b, _) in smooth_drive(), c in 0.0..1.5f64, periodic in any::<bool>()) {
        let bc = if periodic { BoundaryKind::Periodic } else { BoundaryKind::NoFlux };
        let g = Grid1D::new(0.0, 2.0 * std::f64::consts::PI, 64, bc).unwrap();
        let mut v = stat(a, SpaceProfile::Cos).plus(&stat(b, SpaceProfile::Sin));
        if !periodic {
            v = v.plus(&stat(c, SpaceProfile::Quadratic));
        }
        let drive = ExternalDrive::from_potential(v);
        let rho = equilibrium_density(&g, &drive, 1.0, 1.0).unwrap();
        let m = Fpe1Model::ideal(g, drive);
        let dt = m.stability_bound(&rho, 0.0, None).unwrap();
        let next = m.fpe_step(&Fpe1State::new(rho.clone()), dt).unwrap();
        prop_assert!(next.rho.max_distance(&rho).unwrap() / dt < 1e-6);
    }
}
