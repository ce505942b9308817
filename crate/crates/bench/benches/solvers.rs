use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use ddft_core::bd::{bd_step, Ensemble};
use ddft_core::nbody::{NBodyDensity, NBodyModel};
use ddft_core::{
    BoundaryKind, ExternalDrive, Fpe1Model, Fpe1State, Grid1D, PairInteraction, PairKind, Potential, Quantity, ScalarField,
    SpaceProfile, TimeProfile,
};

fn harmonic() -> ExternalDrive {
    ExternalDrive::from_potential(Potential::single(0.5, SpaceProfile::Quadratic, TimeProfile::Constant))
}

fn gaussian(g: Grid1D) -> ScalarField {
    ScalarField::from_fn(g, Quantity::Density, |x| (-(x - 0.3) * (x - 0.3)).exp()).unwrap()
}

fn fpe_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("fpe_step");
    for cells in [256, 4096] {
        let g = Grid1D::new(-4.0, 4.0, cells, BoundaryKind::NoFlux).unwrap();
        let m = Fpe1Model::ideal(g, harmonic());
        let state = Fpe1State::new(gaussian(g));
        let dt = 0.9 * m.stability_bound(&state.rho, 0.0, None).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(cells), &state, |b, s| b.iter(|| m.fpe_step(black_box(s), dt).unwrap()));
    }
    group.finish();
}

fn nbody_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("nbody_step");
    for (n, cells) in [(2, 64), (3, 24)] {
        let g = Grid1D::new(-3.0, 3.0, cells, BoundaryKind::NoFlux).unwrap();
        let pair = PairInteraction::new(PairKind::GaussianCore { epsilon: 1.0, sigma: 0.5 }, &g).unwrap();
        let m = NBodyModel::ideal(g, n, harmonic()).with_pair(pair);
        let p = NBodyDensity::product(gaussian(g).values(), g, n).unwrap();
        let dt = 0.9 * m.stability_bound(0.0).unwrap();
        group.bench_with_input(BenchmarkId::new(format!("N{n}"), cells), &p, |b, p| b.iter(|| m.nbody_step(black_box(p), dt).unwrap()));
    }
    group.finish();
}

fn bd_steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("bd_step");
    let g = Grid1D::new(-3.0, 3.0, 48, BoundaryKind::NoFlux).unwrap();
    let pair = PairInteraction::new(PairKind::GaussianCore { epsilon: 1.0, sigma: 0.5 }, &g).unwrap();
    for replicas in [1_000, 10_000] {
        let m = NBodyModel::ideal(g, 2, harmonic()).with_pair(pair);
        let e = Ensemble::from_density(1, replicas, 2, &gaussian(g)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(replicas), &e, |b, e| b.iter(|| bd_step(black_box(e), &m, 1e-3).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, fpe_step, nbody_step, bd_steps);
criterion_main!(benches);
