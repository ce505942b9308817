//! Conservative finite-volume solver for the one-body Smoluchowski equation
//! `∂_t ρ = -∂_x j` with
//! `j = -D ∂_x ρ - Dβ ρ ∂_x V + Dβ ρ R + Dβ ∫ ρ₂(x, y) K₂(x, y) dy`.
//!
//! Fluxes live on faces with the logarithmic-mean face density, so mass is
//! conserved by telescoping and `ρ ∝ exp(-βV)` is an exact discrete fixed
//! point when `K₂ = 0`, `R = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{
    density_ln, face_divergence, integrate, log_mean_with_logs, BoundaryKind, Grid1D, Quantity, ScalarField,
    TimeSeries, VectorField,
};
use crate::interactions::{Closure, ExternalDrive, PairInteraction};
use crate::tensor::DensityTensor;

/// Densities in `[-NEGATIVE_CLIP, 0)` are clipped to zero; anything lower aborts.
pub const NEGATIVE_CLIP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeScheme {
    #[default]
    Euler,
    /// Two-stage explicit trapezoidal rule (second order in time).
    Heun,
}

/// Everything that defines the one-body dynamics apart from the state.
#[derive(Debug, Clone)]
pub struct Fpe1Model {
    pub grid: Grid1D,
    pub beta: f64,
    pub diffusion: f64,
    pub drive: ExternalDrive,
    pub pair: PairInteraction,
    pub closure: Closure,
    pub scheme: TimeScheme,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fpe1State {
    pub t: f64,
    pub rho: ScalarField,
}

impl Fpe1State {
    pub fn new(rho: ScalarField) -> Self {
        Self { t: 0.0, rho }
    }
}

/// Frames of a run together with the currents at the frame times.
#[derive(Debug, Clone)]
pub struct Fpe1Run {
    pub densities: TimeSeries<ScalarField>,
    pub currents: TimeSeries<VectorField>,
    pub dt: f64,
    pub steps: usize,
    /// `max_t |∫ρ(t) - ∫ρ(0)|`
    pub mass_drift: f64,
    /// Smallest density value seen before clipping.
    pub min_density: f64,
}

/// Face currents from cell densities, face forces and cell interaction forces.
///
/// `face_force` is the total external force on each face and `interaction`
/// the average interaction force `E` at the cell centers (zeros for ideal
/// systems). Boundary faces follow the boundary condition at time `t`.
pub(crate) fn assemble_current(
    grid: &Grid1D,
    rho: &[f64],
    face_force: &[f64],
    interaction: Option<&[f64]>,
    beta: f64,
    diffusion: f64,
    t: f64,
) -> Vec<f64> {
    let n = grid.n_cells();
    let inv_dx = 1.0 / grid.dx();
    let ln: Vec<f64> = rho.iter().map(|&v| density_ln(v)).collect();
    let face = |a: usize, b: usize, f: usize| {
        let mean = log_mean_with_logs(rho[a], rho[b], ln[a], ln[b]);
        let mut j = -diffusion * (rho[b] - rho[a]) * inv_dx + diffusion * beta * mean * face_force[f];
        if let Some(e) = interaction {
            j += diffusion * beta * 0.5 * (e[a] + e[b]);
        }
        j
    };
    let mut j = vec![0.0; n + 1];
    for f in 1..n {
        j[f] = face(f - 1, f, f);
    }
    match grid.bc() {
        BoundaryKind::NoFlux => {}
        BoundaryKind::Periodic => {
            let w = face(n - 1, 0, 0);
            j[0] = w;
            j[n] = w;
        }
        BoundaryKind::PrescribedNormalFlux { left, right } => {
            j[0] = left.value(t);
            j[n] = right.value(t);
        }
    }
    j
}

/// One-body current on the faces for a given two-body density.
///
/// `rho2` may be omitted only for non-interacting systems.
pub fn one_body_current(
    rho: &ScalarField,
    rho2: Option<&DensityTensor>,
    drive: &ExternalDrive,
    p: &PairInteraction,
    t: f64,
    beta: f64,
    diffusion: f64,
) -> Result<VectorField> {
    let grid = *rho.grid();
    let interaction = match (p.is_none(), rho2) {
        (true, _) => None,
        (false, Some(r2)) => {
            if r2.rank() != 2 || !r2.grid().same_mesh(&grid) {
                return Err(Error::GridMismatch);
            }
            Some(crate::interactions::avg_interaction_force(r2, p, 1)?.into_values())
        }
        (false, None) => {
            return Err(Error::ClosureUnavailable("interacting current needs a two-body density".into()))
        }
    };
    let force = drive.face_force(&grid, t)?;
    let j = assemble_current(&grid, rho.values(), &force, interaction.as_deref(), beta, diffusion, t);
    VectorField::new(grid, Quantity::Current, j)
}

impl Fpe1Model {
    pub fn ideal(grid: Grid1D, drive: ExternalDrive) -> Self {
        Self {
            grid,
            beta: 1.0,
            diffusion: 1.0,
            drive,
            pair: PairInteraction::none(),
            closure: Closure::None,
            scheme: TimeScheme::Euler,
        }
    }

    pub fn with_scheme(mut self, scheme: TimeScheme) -> Self {
        self.scheme = scheme;
        self
    }

    fn interaction(&self, rho: &ScalarField) -> Result<Option<Vec<f64>>> {
        if self.pair.is_none() {
            return Ok(None);
        }
        Ok(Some(self.closure.interaction_force(rho, &self.pair)?))
    }

    fn current_values(&self, rho: &ScalarField, t: f64, extra: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut force = self.drive.face_force(&self.grid, t)?;
        if let Some(extra) = extra {
            force.iter_mut().zip(extra).for_each(|(a, b)| *a += b);
        }
        let e = self.interaction(rho)?;
        Ok(assemble_current(&self.grid, rho.values(), &force, e.as_deref(), self.beta, self.diffusion, t))
    }

    /// One-body current of `rho` at time `t` under this model's closure.
    pub fn current(&self, rho: &ScalarField, t: f64) -> Result<VectorField> {
        self.current_with(rho, t, None)
    }

    /// Current with an additional face force (e.g. a loophole potential gradient).
    pub fn current_with(&self, rho: &ScalarField, t: f64, extra: Option<&[f64]>) -> Result<VectorField> {
        rho.check_grid(&self.grid)?;
        VectorField::new(self.grid, Quantity::Current, self.current_values(rho, t, extra)?)
    }

    /// `min(dx² / (2D (1 + β F_max dx / D)), 2 / (D β² F_max²))` with
    /// `F_max` the largest face force (external plus mean interaction force
    /// per particle). The second term only binds at cell Péclet numbers
    /// above 2.
    pub fn stability_bound(&self, rho: &ScalarField, t: f64, extra: Option<&[f64]>) -> Result<f64> {
        let mut fmax = self.drive.max_force(&self.grid, t)?;
        if let Some(extra) = extra {
            let f = self.drive.face_force(&self.grid, t)?;
            fmax = f.iter().zip(extra).fold(0.0, |m: f64, (a, b)| m.max((a + b).abs()));
        }
        if let Some(e) = self.interaction(rho)? {
            let mf = e
                .iter()
                .zip(rho.values())
                .filter(|(_, r)| **r > 0.0)
                .fold(0.0, |m: f64, (e, r)| m.max((e / r).abs()));
            fmax += mf;
        }
        let dx = self.grid.dx();
        let diffusive = dx * dx / (2.0 * self.diffusion * (1.0 + self.beta * fmax * dx / self.diffusion));
        // centered advection under forward Euler: (u dt / dx)² <= 2 D dt / dx², u = DβF
        let advective = 2.0 / (self.diffusion * (self.beta * fmax).powi(2));
        Ok(diffusive.min(advective))
    }

    fn euler_update(&self, rho: &[f64], j: &[f64], dt: f64) -> Vec<f64> {
        let div = face_divergence(&self.grid, j);
        rho.iter().zip(div).map(|(r, d)| r - dt * d).collect()
    }

    /// Advances the state by `dt`, enforcing the stability bound.
    pub fn fpe_step(&self, state: &Fpe1State, dt: f64) -> Result<Fpe1State> {
        self.step_with(state, dt, None)
    }

    /// Like [`fpe_step`](Self::fpe_step) with an extra face force held
    /// fixed over the step.
    pub fn step_with(&self, state: &Fpe1State, dt: f64, extra: Option<&[f64]>) -> Result<Fpe1State> {
        let bound = self.stability_bound(&state.rho, state.t, extra)?;
        if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
            return Err(Error::StepTooLarge { dt, bound });
        }
        let t = state.t;
        let rho = state.rho.values();
        let j0 = self.current_values(&state.rho, t, extra)?;
        let next = match self.scheme {
            TimeScheme::Euler => self.euler_update(rho, &j0, dt),
            TimeScheme::Heun => {
                let stage = self.euler_update(rho, &j0, dt);
                let stage = ScalarField::raw(self.grid, Quantity::Density, clip(stage, t + dt)?);
                let j1 = self.current_values(&stage, t + dt, extra)?;
                let javg: Vec<f64> = j0.iter().zip(&j1).map(|(a, b)| 0.5 * (a + b)).collect();
                self.euler_update(rho, &javg, dt)
            }
        };
        let values = clip(next, t + dt)?;
        Ok(Fpe1State { t: t + dt, rho: ScalarField::raw(self.grid, Quantity::Density, values) })
    }

    /// Runs to `t_end` with steps no larger than `dt_max` (shrunk so that
    /// `t_end` is hit exactly), storing every `frame_stride`-th step.
    pub fn run(&self, rho0: &ScalarField, dt_max: f64, t_end: f64, frame_stride: usize) -> Result<Fpe1Run> {
        self.run_with(rho0, dt_max, t_end, frame_stride, |_, _| None)
    }

    /// [`run`](Self::run) with an extra face force supplied per step from the
    /// step's start time and density.
    pub fn run_with(
        &self,
        rho0: &ScalarField,
        dt_max: f64,
        t_end: f64,
        frame_stride: usize,
        mut extra: impl FnMut(f64, &ScalarField) -> Option<Vec<f64>>,
    ) -> Result<Fpe1Run> {
        rho0.check_grid(&self.grid)?;
        if !(t_end > 0.0 && dt_max > 0.0) || frame_stride == 0 {
            return Err(Error::InvalidParameter("need t_end > 0, dt > 0 and frame_stride >= 1".into()));
        }
        let steps = ((t_end / dt_max - 1e-9).ceil().max(1.0) as usize).div_ceil(frame_stride) * frame_stride;
        let dt = t_end / steps as f64;
        let mut state = Fpe1State::new(ScalarField::new(self.grid, Quantity::Density, rho0.values().to_vec())?);
        let mass0 = integrate(&state.rho);
        let mut densities = TimeSeries::new();
        let mut currents = TimeSeries::new();
        let mut mass_drift = 0.0f64;
        let mut min_density = rho0.values().iter().copied().fold(f64::INFINITY, f64::min);
        for step in 0..=steps {
            let ex = if step < steps || step % frame_stride == 0 { extra(state.t, &state.rho) } else { None };
            if step % frame_stride == 0 || step == steps {
                let t_frame = if step == steps { t_end } else { state.t };
                currents.push(t_frame, self.current_with(&state.rho, state.t, ex.as_deref())?)?;
                densities.push(t_frame, state.rho.clone())?;
            }
            if step == steps {
                break;
            }
            state = self.step_with(&state, dt, ex.as_deref())?;
            min_density = min_density.min(state.rho.values().iter().copied().fold(f64::INFINITY, f64::min));
            mass_drift = mass_drift.max((integrate(&state.rho) - mass0).abs());
        }
        Ok(Fpe1Run { densities, currents, dt, steps, mass_drift, min_density })
    }
}

pub(crate) fn clip(mut values: Vec<f64>, t: f64) -> Result<Vec<f64>> {
    for (index, v) in values.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v < -NEGATIVE_CLIP || !v.is_finite() {
                return Err(Error::Instability { t, index, value: *v });
            }
            *v = 0.0;
        } else if !v.is_finite() {
            return Err(Error::Instability { t, index, value: *v });
        }
    }
    Ok(values)
}

/// Continuity residual `∂_t ρ + ∂_x j` at the interior frames of a run.
#[derive(Debug, Clone)]
pub struct ContinuityResidual {
    pub times: Vec<f64>,
    pub residuals: Vec<ScalarField>,
    pub max_norms: Vec<f64>,
}

impl ContinuityResidual {
    pub fn max(&self) -> f64 {
        self.max_norms.iter().copied().fold(0.0, f64::max)
    }
}

/// Centered-in-time continuity residual of stored density frames, with the
/// current recomputed by `current(ρ_k, t_k)`.
pub fn continuity_residual_with(
    densities: &TimeSeries<ScalarField>,
    mut current: impl FnMut(&ScalarField, f64) -> Result<VectorField>,
) -> Result<ContinuityResidual> {
    if densities.len() < 3 {
        return Err(Error::TooFewFrames { needed: 3, got: densities.len() });
    }
    let h = densities
        .uniform_step()
        .ok_or_else(|| Error::InvalidParameter("continuity residual needs uniformly spaced frames".into()))?;
    let times = densities.times();
    let frames = densities.frames();
    let mut out = ContinuityResidual { times: Vec::new(), residuals: Vec::new(), max_norms: Vec::new() };
    for k in 1..frames.len() - 1 {
        let j = current(&frames[k], times[k])?;
        let div = face_divergence(frames[k].grid(), j.values());
        let r: Vec<f64> = (0..div.len())
            .map(|i| (frames[k + 1].values()[i] - frames[k - 1].values()[i]) / (2.0 * h) + div[i])
            .collect();
        let field = ScalarField::raw(*frames[k].grid(), Quantity::Generic, r);
        out.max_norms.push(field.max_norm());
        out.times.push(times[k]);
        out.residuals.push(field);
    }
    Ok(out)
}

/// Continuity residual of a run of `model`.
pub fn continuity_residual(model: &Fpe1Model, densities: &TimeSeries<ScalarField>) -> Result<ContinuityResidual> {
    continuity_residual_with(densities, |rho, t| model.current(rho, t))
}

/// Boltzmann profile `exp(-βV(x, 0))` scaled to integrate to `mass`.
pub fn equilibrium_density(grid: &Grid1D, drive: &ExternalDrive, beta: f64, mass: f64) -> Result<ScalarField> {
    let v = drive.potential_at(grid, 0.0)?;
    let vmin = v.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = v.iter().map(|x| (-beta * (x - vmin)).exp()).collect();
    let s = raw.iter().sum::<f64>() * grid.dx();
    ScalarField::new(*grid, Quantity::Density, raw.into_iter().map(|r| r * mass / s).collect())
}
