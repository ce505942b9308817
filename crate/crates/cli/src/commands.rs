//! Subcommand bodies. Each fills an [`Outcome`] and writes its artifacts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ddft_core::bd::{run_sampling, Ensemble, FieldEstimator};
use ddft_core::fields::anchored_cumsum;
use ddft_core::fpe1::equilibrium_density;
use ddft_core::inverse::{custom_flow_iterate, invert_ideal, CustomFlowConfig, InversionTarget, DEFAULT_CONTINUITY_TOL};
use ddft_core::loophole::verify_loophole;
use ddft_core::nbody::{reduce, reduced_residual, ybg_boundary_check, NBodyDensity};
use ddft_core::scenario::{DriveSpec, InverseMode};
use ddft_core::uniq::{
    current_uniqueness_check, lemma_check, lower_order_density_differences, taylor_coefficients, uniqueness_report,
    Fpe1Pair, PairedDynamics, Verdict, MAX_ORDER,
};
use ddft_core::{
    BoundaryKind, Error, ExternalDrive, Fpe1Model, Grid1D, LoopholeSpec, LoopholeVerdict, PairKind, Quantity, ScalarField, Scenario,
    TimeSeries, VectorField,
};

use crate::error::CliError;
use crate::output::{read_frames, write_force, write_frame_rows, write_frames, Check, Outcome};

type Res = Result<(), CliError>;

fn mass(rho: &ScalarField) -> f64 {
    rho.values().iter().sum::<f64>() * rho.grid().dx()
}

fn potentials(drive: &ExternalDrive, grid: &Grid1D, times: &[f64]) -> Result<TimeSeries<ScalarField>, CliError> {
    let mut out = TimeSeries::new();
    for &t in times {
        out.push(t, ScalarField::new(*grid, Quantity::Potential, drive.potential_at(grid, t)?)?)?;
    }
    Ok(out)
}

/// Step from the scenario and a stability bound, with a note when it was chosen for the user.
fn step(s: &Scenario, bound: f64, o: &mut Outcome) -> f64 {
    let c = s.choose_dt(bound);
    match s.dt {
        Some(dt) if c.reduced => {
            o.note(format!("requested dt {dt:e} exceeds the stability bound {bound:e}; using {:e}", c.dt))
        }
        None => o.note(format!("dt set from {} x stability bound", s.dt_safety)),
        _ => {}
    }
    o.metric("stability_bound", bound);
    c.dt
}

fn usage(msg: &str) -> CliError {
    CliError::Usage(msg.into())
}

pub fn simulate(s: &Scenario, out: &Path, o: &mut Outcome) -> Res {
    let m = s.fpe1_model()?;
    let g = m.grid;
    let rho0 = s.initial_density()?;
    let m0 = mass(&rho0);
    let dt = step(s, m.stability_bound(&rho0, 0.0, None)?, o);
    let run = m.run(&rho0, dt, s.t_end, s.frame_stride)?;
    o.metric("dt", run.dt);
    o.metric("steps", run.steps);
    o.metric("frames", run.densities.len());
    o.metric("mass", m0);
    o.check(Check::at_most("relative_mass_drift", run.mass_drift / m0, s.tolerances.mass));
    o.check(Check::at_least("min_density", run.min_density, -s.tolerances.negativity));
    let comparable = m.drive.is_static()
        && s.drift == 0.0
        && s.interaction == PairKind::None
        && !matches!(s.drive, DriveSpec::Sampled { .. });
    if let (true, Some((_, last))) = (comparable, run.densities.last()) {
        let unit = ScalarField::new(g, Quantity::Density, last.values().iter().map(|r| r / m0).collect())?;
        o.metric("l1_to_unit_equilibrium", unit.l1_distance(&s.exact_equilibrium(1.0)?)?);
    }
    let v = potentials(&m.drive, &g, run.densities.times())?;
    write_frames(&out.join("frames.csv"), &run.densities, &run.currents, &v)
}

pub fn nbody_verify(s: &Scenario, out: &Path, o: &mut Outcome) -> Res {
    let n = s.n_particles;
    if n < 2 {
        return Err(usage("nbody-verify needs n-particles >= 2"));
    }
    let mut fine_s = s.clone();
    fine_s.domain.n_cells *= 2;
    let coarse = s.nbody_model()?;
    let fine = fine_s.nbody_model()?;
    let wanted = step(s, coarse.stability_bound(0.0)?.min(2.0 * fine.stability_bound(0.0)?), o);
    // whole strides, so that every second fine frame shares a coarse frame time
    let stride = s.frame_stride;
    let chunks = ((s.t_end / (wanted * stride as f64)) - 1e-9).ceil().max(1.0) as usize;
    let dt = s.t_end / (chunks * stride) as f64;
    o.metric("dt", dt);
    o.metric("steps", chunks * stride);

    let (mut residual, mut rate, mut boundary, mut ybg) = ([0.0f64; 2], 0.0f64, 0.0f64, 0.0f64);
    for (k, (m, sc, h)) in [(&coarse, s, dt), (&fine, &fine_s, dt / 2.0)].into_iter().enumerate() {
        let p0 = NBodyDensity::product(sc.initial_density()?.values(), m.grid, n)?;
        let run = m.run(&p0, h, s.t_end, stride)?;
        let r = reduced_residual(m, &run.densities, 1)?;
        // residual entries start at the second frame
        residual[k] = r.max_norms.iter().enumerate().filter(|(i, _)| k == 0 || i % 2 == 1).map(|(_, v)| *v).fold(0.0, f64::max);
        boundary = r.boundary_max.iter().copied().fold(boundary, f64::max);
        for (t, p) in run.densities.iter() {
            ybg = ybg_boundary_check(&m.current(p, t)?).iter().fold(ybg, |a, v| a.max(v.abs()));
        }
        if k > 0 {
            continue;
        }
        rate = r.rate_max.iter().copied().fold(0.0, f64::max);
        o.check(Check::at_most("mass_drift", run.mass_drift, s.tolerances.mass));
        o.check(Check::at_most("symmetry_drift", run.symmetry_drift, s.tolerances.mass));
        o.check(Check::at_least("min_value", run.min_value, -s.tolerances.negativity));
        let (mut rho, mut j) = (TimeSeries::new(), TimeSeries::new());
        for (t, p) in run.densities.iter() {
            rho.push(t, reduce(p, 1)?.to_scalar_field()?)?;
            j.push(t, m.current(p, t)?.one_body())?;
        }
        let v = potentials(&m.drive, &m.grid, rho.times())?;
        write_frames(&out.join("frames.csv"), &rho, &j, &v)?;
    }
    o.metric("residual_coarse", residual[0]);
    o.metric("residual_fine", residual[1]);
    o.metric("rate_max", rate);
    o.metric("boundary_term_max", boundary);
    o.metric("wall_flux_check", ybg);
    if residual[0] <= 1e-10 * rate.max(1.0) {
        o.note("reduced residual is at round-off level; refinement ratio not checked");
    } else {
        o.check(Check::at_least("residual_ratio", residual[0] / residual[1], s.tolerances.residual_ratio));
    }
    if matches!(s.bc, BoundaryKind::PrescribedNormalFlux { .. }) {
        o.note("prescribed wall flux: the boundary line is part of the hierarchy and is reported only");
    } else {
        o.check(Check::at_most("boundary_term", boundary, s.tolerances.boundary));
        o.check(Check::at_most("wall_flux", ybg, s.tolerances.boundary));
    }
    Ok(())
}

pub fn bd(s: &Scenario, out: &Path, o: &mut Outcome) -> Res {
    let b = s.bd.ok_or_else(|| usage("bd needs a [bd] table"))?;
    let dt = s.dt.ok_or_else(|| usage("bd needs an explicit dt"))?;
    let m = s.nbody_model()?;
    let g = m.grid;
    let n = s.n_particles;
    let e = Ensemble::from_density(s.seed, b.replicas, n, &s.initial_density()?)?;
    let e = run_sampling(&m, &e, dt, b.burn_in.unwrap_or(0), 1, None)?;
    let mut est = FieldEstimator::new(g, b.pair_bins, b.replicas, n)?;
    let e = run_sampling(&m, &e, dt, b.steps, b.sample_every, Some(&mut est))?;
    let f = est.finish()?;
    let noise = f.rho_se.iter().sum::<f64>() * g.dx();
    o.metric("samples", f.samples);
    o.metric("t", e.t());
    o.metric("empty_bins", f.empty_bins.len());
    o.metric("rho_noise_l1", noise);
    let j_ratio = f.j.values().iter().zip(&f.j_se).filter(|(_, se)| **se > 0.0).map(|(j, se)| j.abs() / se).fold(0.0, f64::max);
    o.metric("max_current_over_se", j_ratio);

    if m.drive.is_static() && s.drift == 0.0 {
        let reference = if s.interaction == PairKind::None {
            Some(equilibrium_density(&g, &m.drive, s.beta, n as f64)?)
        } else {
            match NBodyDensity::boltzmann(&m) {
                Ok(p) => Some(reduce(&p.p, 1)?.to_scalar_field()?),
                Err(Error::BudgetExceeded { .. }) => {
                    o.note("grid too large for the exact N-body equilibrium; no reference comparison");
                    None
                }
                Err(e) => return Err(e.into()),
            }
        };
        if let Some(r) = reference {
            o.check(Check::at_most("l1_to_equilibrium_per_particle", f.rho.l1_distance(&r)? / n as f64, s.tolerances.l1));
        }
    } else {
        o.note("driven system: no equilibrium reference");
    }

    let t = e.t();
    let v = ScalarField::new(g, Quantity::Potential, m.drive.potential_at(&g, t)?)?;
    write_frame_rows(&out.join("frames.csv"), std::iter::once((t, &f.rho, &f.j, &v)))?;
    let mut w = BufWriter::new(File::create(out.join("estimate.csv"))?);
    writeln!(w, "# ddft-forge bd-estimate v1")?;
    writeln!(w, "x,rho,rho_se,j,j_se")?;
    for (i, x) in g.cell_centers().iter().enumerate() {
        writeln!(w, "{x:e},{:e},{:e},{:e},{:e}", f.rho.values()[i], f.rho_se[i], f.j.values()[i + 1], f.j_se[i + 1])?;
    }
    w.flush()?;
    Ok(())
}

pub fn loophole(s: &Scenario, out: &Path, o: &mut Outcome) -> Res {
    if s.loophole.is_none() {
        return Err(usage("loophole needs a [loophole] table"));
    }
    let rep = verify_loophole(&LoopholeSpec::from_scenario(s)?)?;
    o.metric("loophole_verdict", rep.verdict.to_string());
    o.metric("density_deviation", rep.density_deviation);
    o.metric("deviation_tolerance", rep.deviation_tolerance);
    o.metric("current_shift_error", rep.current_shift_error);
    o.metric("div_shift", rep.div_shift);
    o.metric("wall_flux_left", rep.boundary_flux.0);
    o.metric("wall_flux_right", rep.boundary_flux.1);
    o.metric("violates_no_flux", rep.violates_no_flux);
    o.metric("surface_value", rep.surface_value);
    o.metric("seam_jump", rep.seam_jump);
    o.metric("floored_faces", rep.floored_faces);
    if let Some(e) = rep.base_error {
        o.metric("base_discretization_error", e);
    }
    o.metric("dt", rep.dt);
    o.metric("steps", rep.steps);
    o.check(Check::at_most("density_deviation", rep.density_deviation, rep.deviation_tolerance));
    o.check(Check::at_most("current_shift_error", rep.current_shift_error, rep.shift_tolerance));
    o.check(Check::at_most("div_shift", rep.div_shift, s.tolerances.divergence));
    o.check(Check::holds("verdict", rep.verdict != LoopholeVerdict::NotConfirmed));
    let f = &rep.frames;
    write_frames(&out.join("frames.csv"), &f.rho, &f.j, &f.v)?;
    write_frames(&out.join("frames_base.csv"), &f.base_rho, &f.base_j, &f.base_v)
}

pub fn uniqueness_probe(s: &Scenario, out: &Path, o: &mut Outcome) -> Res {
    let primed_drive = s.primed().ok_or_else(|| usage("uniqueness-probe needs a primed-drive table"))?;
    let base = s.fpe1_model()?;
    let mut primed = base.clone();
    primed.drive = primed_drive;
    let g = base.grid;
    let rho0 = s.initial_density()?;
    let pd = taylor_coefficients(&base.drive.potential, &primed.drive.potential, &g, MAX_ORDER)?;

    // t-end is the step h of the finite-difference time derivatives
    let h = s.t_end;
    let mut bound = f64::INFINITY;
    for k in 0..=MAX_ORDER + 2 {
        let t = k as f64 * h;
        bound = bound.min(base.stability_bound(&rho0, t, None)?).min(primed.stability_bound(&rho0, t, None)?);
    }
    let substeps = ((h / (s.dt_safety * bound)) - 1e-9).ceil().max(1.0) as usize;
    o.metric("h", h);
    o.metric("substeps", substeps);
    let pair = Fpe1Pair { base, primed, rho0: rho0.clone(), substeps };

    let d_beta = s.diffusion * s.beta;
    let rep = uniqueness_report(&rho0, &pd, pair.wall_rule(0), d_beta)?;
    o.metric("l", rep.l.map_or_else(|| "none".to_string(), |l| l.to_string()));
    o.metric("order_tolerance", rep.tolerance);
    o.metric("uniqueness_verdict", rep.verdict.to_string());
    o.metric("surface_value", rep.surface_value);
    if let Some(e) = &rep.energy {
        o.metric("energy_lhs", e.lhs);
        o.metric("energy_volume", e.volume);
        o.metric("energy_boundary", e.boundary);
        o.check(Check::at_most("energy_imbalance", e.imbalance() / e.lhs.abs().max(f64::MIN_POSITIVE), s.tolerances.relative));
    }
    match (rep.l, rep.verdict) {
        (Some(l), Verdict::UniqueWithinTolerance) => {
            let lemma = lemma_check(&pair, &pd, Some(l), h)?;
            let scale = lemma.rhs.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
            o.metric("lemma_order", lemma.order);
            o.check(Check::at_most("lemma_relative_error", lemma.relative_error, s.tolerances.relative));
            let lower = lower_order_density_differences(&pair, l, h)?.into_iter().fold(0.0, f64::max);
            o.check(Check::at_most("lower_order_difference", lower / scale, s.tolerances.relative));
            let current = current_uniqueness_check(&pair, &pd, Some(l), h)?;
            o.check(Check::at_most("current_relative_error", current.relative_error, s.tolerances.relative));
        }
        (Some(_), v) => o.note(format!("verdict {v}: time-derivative checks skipped")),
        (None, _) => o.note("no order at which the potentials differ in their gradients"),
    }

    let dt = h / substeps as f64;
    let a = pair.base.run(&rho0, dt, s.t_end, substeps)?;
    let b = pair.primed.run(&rho0, dt, s.t_end, substeps)?;
    let va = potentials(&pair.base.drive, &g, a.densities.times())?;
    let vb = potentials(&pair.primed.drive, &g, b.densities.times())?;
    write_frames(&out.join("frames.csv"), &a.densities, &a.currents, &va)?;
    write_frames(&out.join("frames_primed.csv"), &b.densities, &b.currents, &vb)
}

pub fn invert(s: &Scenario, target_path: Option<&Path>, out: &Path, o: &mut Outcome) -> Res {
    let settings = s.inverse.unwrap_or_default();
    let g = s.grid()?;
    let forward = s.fpe1_model()?;
    let (rho, j, generated) = match target_path {
        Some(p) => {
            let (rho, j) = read_frames(p, &g)?;
            (rho, j, None)
        }
        None if settings.mode == InverseMode::CustomFlow => {
            o.note("no target given: the initial density is held stationary");
            let rho0 = s.initial_density()?;
            let j0 = VectorField::new(g, Quantity::Current, vec![0.0; g.n_cells() + 1])?;
            (TimeSeries::from_frames(vec![0.0], vec![rho0])?, TimeSeries::from_frames(vec![0.0], vec![j0])?, None)
        }
        None => {
            o.note("no target given: frames generated by the forward solver");
            let rho0 = s.initial_density()?;
            let dt = step(s, forward.stability_bound(&rho0, 0.0, None)?, o);
            let run = forward.run(&rho0, dt, s.t_end, s.frame_stride)?;
            (run.densities.clone(), run.currents.clone(), Some(run))
        }
    };
    let mut target = InversionTarget::new(rho, j)?;
    target.drift = s.drift;
    target.beta = s.beta;
    target.diffusion = s.diffusion;
    o.metric("frames", target.rho.len());
    o.metric("continuity_residual", target.continuity_residual());

    match settings.mode {
        InverseMode::Ideal => {
            let inv = invert_ideal(&target, settings.x0, DEFAULT_CONTINUITY_TOL)?;
            let unidentified: usize = inv.unidentified.iter().map(Vec::len).sum();
            o.metric("unidentified_faces", unidentified);
            let mut force = TimeSeries::new();
            for (t, grad) in inv.gradient.iter() {
                force.push(t, VectorField::new(g, Quantity::Force, grad.values().iter().map(|d| s.drift - d).collect())?)?;
            }
            if let Some(run) = generated {
                let (lo, hi) = if g.bc().is_periodic() { (0, g.n_cells()) } else { (1, g.n_cells() - 1) };
                let (mut err, mut scale) = (0.0f64, 1.0f64);
                for ((t, f), bad) in force.iter().zip(&inv.unidentified) {
                    let truth = forward.drive.face_force(&g, t)?;
                    for k in (lo..=hi).filter(|k| !bad.contains(k)) {
                        err = err.max((f.values()[k] - truth[k]).abs());
                        scale = scale.max(truth[k].abs());
                    }
                }
                o.check(Check::at_most("force_error", err / scale, s.tolerances.relative));
                let replay = Fpe1Model {
                    drive: ExternalDrive::default().with_sampled(inv.potential.clone()).with_drift(s.drift),
                    ..forward.clone()
                };
                let again = replay.run(&run.densities.frames()[0], run.dt, s.t_end, s.frame_stride)?;
                let mut worst = 0.0f64;
                for (a, b) in again.densities.frames().iter().zip(run.densities.frames()) {
                    worst = worst.max(a.l1_distance(b)?);
                }
                o.check(Check::at_most("forward_l1", worst / mass(&run.densities.frames()[0]), s.tolerances.l1));
            }
            write_force(&out.join("force.csv"), &force)?;
            write_frames(&out.join("frames.csv"), &target.rho, &target.j, &inv.potential)
        }
        InverseMode::CustomFlow => {
            let b = s.bd.ok_or_else(|| usage("custom-flow inversion needs a [bd] table"))?;
            if target.rho.len() > 1 {
                let k = target.rho.len() - 1;
                o.note(format!("custom flow uses the last target frame (t = {}) as a stationary target", target.rho.times()[k]));
                let (r, jl) = (target.rho.frames()[k].clone(), target.j.frames()[k].clone());
                let mut single = InversionTarget::new(TimeSeries::from_frames(vec![0.0], vec![r])?, TimeSeries::from_frames(vec![0.0], vec![jl])?)?;
                single.drift = target.drift;
                single.beta = target.beta;
                single.diffusion = target.diffusion;
                target = single;
            }
            let defaults = CustomFlowConfig::default();
            let cfg = CustomFlowConfig {
                n_particles: s.n_particles,
                replicas: b.replicas,
                dt: s.dt.unwrap_or(defaults.dt),
                burn_in: b.burn_in.unwrap_or(defaults.burn_in),
                steps: b.steps,
                sample_every: b.sample_every,
                relaxation: settings.relaxation,
                max_iter: settings.max_iter,
                seed: s.seed,
                ..defaults
            };
            let rep = custom_flow_iterate(&target, s.pair()?, &cfg, DEFAULT_CONTINUITY_TOL)?;
            o.metric("iterations", rep.history.len());
            if let Some(last) = rep.history.last() {
                o.metric("rho_l1", last.rho_l1);
                o.metric("rho_noise", last.rho_noise);
            }
            o.check(Check::holds("converged", rep.converged));
            let t = target.rho.times()[0];
            let grad: Vec<f64> = rep.best_force.values().iter().map(|f| s.drift - f).collect();
            let v = ScalarField::new(g, Quantity::Potential, anchored_cumsum(&g, &grad, settings.x0))?;
            write_force(&out.join("force.csv"), &TimeSeries::from_frames(vec![t], vec![rep.best_force.clone()])?)?;
            write_frames(&out.join("frames.csv"), &target.rho, &target.j, &TimeSeries::from_frames(vec![t], vec![v])?)
        }
    }
}
