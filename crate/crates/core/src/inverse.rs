//! Density and current to potential: exact inversion of the discrete
//! ideal-gas current and an iterative custom-flow scheme that uses Brownian
//! dynamics for interacting systems.

use crate::bd::{run_sampling, Ensemble, FieldEstimator};
use crate::error::{Error, Result};
use crate::fields::{anchored_cumsum, face_divergence, log_mean, Quantity, ScalarField, TimeSeries, VectorField};
use crate::interactions::{ExternalDrive, FaceForce, PairInteraction};
use crate::nbody::NBodyModel;

/// Default identifiability floor as a fraction of the largest density.
pub const DEFAULT_FLOOR_FRACTION: f64 = 1e-10;
/// Default relative continuity tolerance of the consistency gate.
pub const DEFAULT_CONTINUITY_TOL: f64 = 1e-2;

#[derive(Debug, Clone)]
pub struct InversionTarget {
    pub rho: TimeSeries<ScalarField>,
    pub j: TimeSeries<VectorField>,
    /// Known spatially constant non-conservative force `R`.
    pub drift: f64,
    pub beta: f64,
    pub diffusion: f64,
    /// Absolute density floor; defaults to `1e-10 · max ρ` per frame.
    pub rho_floor: Option<f64>,
}

impl InversionTarget {
    pub fn new(rho: TimeSeries<ScalarField>, j: TimeSeries<VectorField>) -> Result<Self> {
        let t = Self { rho, j, drift: 0.0, beta: 1.0, diffusion: 1.0, rho_floor: None };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rho.is_empty() || self.rho.len() != self.j.len() {
            return Err(Error::InvalidParameter(format!(
                "need matching non-empty density and current series ({} vs {})",
                self.rho.len(),
                self.j.len()
            )));
        }
        if self.rho.times().iter().zip(self.j.times()).any(|(a, b)| (a - b).abs() > 1e-12 * a.abs().max(1.0)) {
            return Err(Error::InvalidParameter("density and current frames must share their times".into()));
        }
        let grid = self.rho.frames()[0].grid();
        for (r, j) in self.rho.frames().iter().zip(self.j.frames()) {
            if !r.grid().same_mesh(grid) || !j.grid().same_mesh(grid) {
                return Err(Error::GridMismatch);
            }
        }
        if !(self.beta > 0.0 && self.diffusion > 0.0 && self.drift.is_finite()) {
            return Err(Error::InvalidParameter("β and D must be positive and R finite".into()));
        }
        Ok(())
    }

    fn floor(&self, rho: &ScalarField) -> f64 {
        self.rho_floor.unwrap_or_else(|| DEFAULT_FLOOR_FRACTION * rho.max_norm())
    }

    /// Relative continuity residual: the largest `|∂_t ρ + ∂_x j|` over all
    /// frames divided by the largest of `|∂_t ρ|`, `|∂_x j|` and the
    /// diffusive divergence `D |Δ²ρ|/dx²`, with centered time differences
    /// (one-sided at the ends). The diffusive term keeps the scale finite
    /// for stationary targets. A single frame is treated as stationary.
    pub fn continuity_residual(&self) -> f64 {
        let rho = self.rho.frames();
        let times = self.rho.times();
        let m = rho.len();
        let (mut worst, mut scale) = (0.0f64, 0.0f64);
        for k in 0..m {
            let div = face_divergence(self.j.frames()[k].grid(), self.j.frames()[k].values());
            let dt_rho: Vec<f64> = if m == 1 {
                vec![0.0; div.len()]
            } else {
                let (a, b) = (k.saturating_sub(1), (k + 1).min(m - 1));
                let h = times[b] - times[a];
                rho[b].values().iter().zip(rho[a].values()).map(|(x, y)| (x - y) / h).collect()
            };
            let dx = rho[k].grid().dx();
            let r = rho[k].values();
            let diffusive = r.windows(3).fold(0.0f64, |s, w| s.max((w[0] - 2.0 * w[1] + w[2]).abs())) * self.diffusion / (dx * dx);
            scale = div.iter().chain(&dt_rho).fold(scale.max(diffusive), |s, v| s.max(v.abs()));
            worst = div.iter().zip(&dt_rho).fold(worst, |s, (d, r)| s.max((d + r).abs()));
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    fn gate(&self, tolerance: f64) -> Result<f64> {
        self.validate()?;
        let residual = self.continuity_residual();
        if residual > tolerance {
            return Err(Error::NoRealizingPotential { residual, tolerance });
        }
        Ok(residual)
    }
}

/// Potential recovered from a target, up to a per-time constant.
#[derive(Debug, Clone)]
pub struct Inversion {
    pub potential: TimeSeries<ScalarField>,
    /// Face values of `∂_x V`; unidentified faces hold 0.
    pub gradient: TimeSeries<VectorField>,
    /// Faces whose density mean fell below the floor, per frame.
    pub unidentified: Vec<Vec<usize>>,
    pub continuity_residual: f64,
}

impl Inversion {
    pub fn identified_everywhere(&self) -> bool {
        self.unidentified.iter().all(|u| u.is_empty())
    }
}

/// Total face force `F = -∂_x V + R` that makes the ideal-gas current of
/// `rho` equal `j`, the exact inverse of the solver's flux
/// `j = -D Δρ/dx + Dβ L(ρ) F`. Faces with `L(ρ) < floor` are returned in
/// the second slot with force 0. Bounded walls copy the adjacent face.
fn ideal_face_force(rho: &ScalarField, j: &VectorField, beta: f64, diffusion: f64, floor: f64) -> (Vec<f64>, Vec<usize>) {
    let grid = rho.grid();
    let r = rho.values();
    let n = r.len();
    let dx = grid.dx();
    let mut bad = Vec::new();
    let mut force = vec![0.0; n + 1];
    let mut at = |f: usize, a: f64, b: f64, jf: f64| {
        let m = log_mean(a, b);
        if m < floor || m == 0.0 {
            bad.push(f);
            0.0
        } else {
            jf / (diffusion * beta * m) + (b - a) / (dx * beta * m)
        }
    };
    for f in 1..n {
        force[f] = at(f, r[f - 1], r[f], j.values()[f]);
    }
    if grid.bc().is_periodic() {
        force[0] = at(0, r[n - 1], r[0], j.values()[0]);
        force[n] = force[0];
    } else {
        force[0] = force[1];
        force[n] = force[n - 1];
    }
    (force, bad)
}

/// Inverts an ideal-gas target: `∂_x V = -j/(DβL) - Δρ/(dx β L) + R` on the
/// faces, then `V` by cumulative quadrature with `V(x0, t) = 0`.
pub fn invert_ideal(target: &InversionTarget, x0: f64, continuity_tol: f64) -> Result<Inversion> {
    let continuity_residual = target.gate(continuity_tol)?;
    let mut potential = TimeSeries::new();
    let mut gradient = TimeSeries::new();
    let mut unidentified = Vec::new();
    for ((t, rho), j) in target.rho.iter().zip(target.j.frames()) {
        let grid = *rho.grid();
        let (force, bad) = ideal_face_force(rho, j, target.beta, target.diffusion, target.floor(rho));
        let mut grad: Vec<f64> = force.iter().map(|f| target.drift - f).collect();
        for &f in &bad {
            grad[f] = 0.0;
        }
        let v = anchored_cumsum(&grid, &grad, x0);
        potential.push(t, ScalarField::new(grid, Quantity::Potential, v)?)?;
        gradient.push(t, VectorField::new(grid, Quantity::Force, grad)?)?;
        unidentified.push(bad);
    }
    Ok(Inversion { potential, gradient, unidentified, continuity_residual })
}

/// Brownian dynamics settings for one custom-flow iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CustomFlowConfig {
    pub n_particles: usize,
    pub replicas: usize,
    pub dt: f64,
    pub burn_in: usize,
    pub steps: usize,
    pub sample_every: usize,
    pub relaxation: f64,
    pub max_iter: usize,
    /// Density mismatch tolerance (`L¹`) on top of three standard errors.
    pub tol: f64,
    /// Faces whose estimated density is below this fraction of the maximum
    /// keep their force.
    pub floor_fraction: f64,
    pub seed: u64,
}

impl Default for CustomFlowConfig {
    fn default() -> Self {
        Self {
            n_particles: 1,
            replicas: 1000,
            dt: 1e-3,
            burn_in: 1000,
            steps: 2000,
            sample_every: 10,
            relaxation: 0.5,
            max_iter: 10,
            tol: 0.02,
            floor_fraction: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub rho_l1: f64,
    /// `L¹` size of three standard errors of the density estimate.
    pub rho_noise: f64,
    pub j_max: f64,
    pub j_noise: f64,
    pub relaxation: f64,
}

#[derive(Debug, Clone)]
pub struct CustomFlowReport {
    /// Face force of the last iterate (`-∂_x V + R` in the ideal case).
    pub force: VectorField,
    /// Best iterate's force (smallest density mismatch).
    pub best_force: VectorField,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
}

/// Iterates `F ← F + λ [(j* - j)/(Dβ ρ̄) + (∇ρ* - ∇ρ)/(β ρ̄)]` with `ρ`, `j`
/// estimated by Brownian dynamics under `F` and the pair interaction.
///
/// Only stationary targets (one frame) are supported. The relaxation is
/// halved whenever the density mismatch grows. Current mismatches within
/// three standard errors are treated as noise.
pub fn custom_flow_iterate(target: &InversionTarget, pair: PairInteraction, cfg: &CustomFlowConfig, continuity_tol: f64) -> Result<CustomFlowReport> {
    target.gate(continuity_tol)?;
    if target.rho.len() != 1 {
        return Err(Error::InvalidParameter("custom flow supports stationary (single-frame) targets".into()));
    }
    if cfg.n_particles == 0 || cfg.replicas == 0 || cfg.steps == 0 || cfg.sample_every == 0 || !(cfg.dt > 0.0) {
        return Err(Error::InvalidParameter("custom flow needs positive particle, replica and step counts".into()));
    }
    if !(cfg.relaxation > 0.0 && cfg.relaxation <= 1.0) {
        return Err(Error::InvalidParameter("relaxation must lie in (0, 1]".into()));
    }
    let rho_t = &target.rho.frames()[0];
    let j_t = &target.j.frames()[0];
    let grid = *rho_t.grid();
    let n = grid.n_cells();
    let dx = grid.dx();
    let (beta, diff) = (target.beta, target.diffusion);
    let (mut force, _) = ideal_face_force(rho_t, j_t, beta, diff, target.floor(rho_t));
    let rt = rho_t.values();

    let mut history = Vec::new();
    let mut lambda = cfg.relaxation;
    let mut best = (f64::INFINITY, force.clone());
    let mut converged = false;
    let mut ensemble: Option<Ensemble> = None;
    for _ in 0..cfg.max_iter {
        let drive = ExternalDrive::default().with_face_force(FaceForce { values: force.clone(), time: Default::default() });
        let model = NBodyModel { grid, n_particles: cfg.n_particles, beta, diffusion: diff, drive, pair, scheme: Default::default() };
        // later iterations continue the previous ensemble; noise is keyed by step count
        let start = match ensemble.take() {
            Some(e) => e,
            None => Ensemble::from_density(cfg.seed, cfg.replicas, cfg.n_particles, rho_t)?,
        };
        let warm = run_sampling(&model, &start, cfg.dt, cfg.burn_in, cfg.sample_every, None)?;
        let mut est = FieldEstimator::new(grid, None, cfg.replicas, cfg.n_particles)?;
        ensemble = Some(run_sampling(&model, &warm, cfg.dt, cfg.steps, cfg.sample_every, Some(&mut est))?);
        let e = est.finish()?;
        let r = e.rho.values();
        let rho_l1 = e.rho.l1_distance(rho_t)?;
        let rho_noise = 3.0 * e.rho_se.iter().sum::<f64>() * dx;
        let j_max = e.j.values().iter().zip(j_t.values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let j_noise = 3.0 * e.j_se.iter().fold(0.0f64, |m, s| m.max(*s));
        if let Some(prev) = history.last().map(|h: &IterationRecord| h.rho_l1) {
            if rho_l1 > prev {
                lambda *= 0.5;
            }
        }
        history.push(IterationRecord { rho_l1, rho_noise, j_max, j_noise, relaxation: lambda });
        if rho_l1 < best.0 {
            best = (rho_l1, force.clone());
        }
        if rho_l1 < cfg.tol + rho_noise && j_max < cfg.tol + j_noise {
            converged = true;
            break;
        }
        let floor = cfg.floor_fraction * e.rho.max_norm();
        let faces: Vec<usize> = if grid.bc().is_periodic() { (0..n).collect() } else { (1..n).collect() };
        for f in faces {
            let (a, b) = if f == 0 { (n - 1, 0) } else { (f - 1, f) };
            if r[a] < floor || r[b] < floor {
                continue;
            }
            let m = log_mean(r[a], r[b]);
            let dj = j_t.values()[f] - e.j.values()[f];
            let dj = if dj.abs() > 3.0 * e.j_se[f] { dj } else { 0.0 };
            let grad_t = (rt[b] - rt[a]) / dx;
            let grad_k = (r[b] - r[a]) / dx;
            force[f] += lambda * (dj / (diff * beta * m) + (grad_t - grad_k) / (beta * m));
        }
        if grid.bc().is_periodic() {
            force[n] = force[0];
        } else {
            force[0] = force[1];
            force[n] = force[n - 1];
        }
    }
    Ok(CustomFlowReport {
        force: VectorField::new(grid, Quantity::Force, force)?,
        best_force: VectorField::new(grid, Quantity::Force, best.1)?,
        history,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{BoundaryKind, Grid1D};

    fn single(rho: ScalarField, j: Vec<f64>) -> InversionTarget {
        let g = *rho.grid();
        InversionTarget::new(
            TimeSeries::from_frames(vec![0.0], vec![rho]).unwrap(),
            TimeSeries::from_frames(vec![0.0], vec![VectorField::new(g, Quantity::Current, j).unwrap()]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn gaussian_inverts_to_quadratic() {
        let g = Grid1D::new(-3.0, 3.0, 120, BoundaryKind::NoFlux).unwrap();
        let rho = ScalarField::from_fn(g, Quantity::Density, |x| (-x * x).exp()).unwrap();
        let inv = invert_ideal(&single(rho, vec![0.0; 121]), 0.0, DEFAULT_CONTINUITY_TOL).unwrap();
        let v = &inv.potential.frames()[0];
        let c = v.values()[60] - g.cell_center(60).powi(2);
        for (x, v) in g.cell_centers().iter().zip(v.values()) {
            assert!((v - x * x - c).abs() < 1e-12);
        }
        assert!(inv.identified_everywhere());
    }

    #[test]
    fn uniform_current_gives_linear_potential() {
        let g = Grid1D::new(-1.0, 1.0, 40, BoundaryKind::Periodic).unwrap();
        let rho = ScalarField::constant(g, Quantity::Density, 1.0).unwrap();
        let inv = invert_ideal(&single(rho, vec![-0.3; 41]), 0.0, DEFAULT_CONTINUITY_TOL).unwrap();
        for (x, v) in g.cell_centers().iter().zip(inv.potential.frames()[0].values()) {
            assert!((v - 0.3 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn continuity_violation_is_rejected() {
        let g = Grid1D::new(0.0, 1.0, 16, BoundaryKind::NoFlux).unwrap();
        let rho = ScalarField::constant(g, Quantity::Density, 1.0).unwrap();
        let j: Vec<f64> = (0..17).map(|f| if f == 0 || f == 16 { 0.0 } else { (f as f64).sin() }).collect();
        let err = invert_ideal(&single(rho, j), 0.5, DEFAULT_CONTINUITY_TOL).unwrap_err();
        assert!(matches!(err, Error::NoRealizingPotential { .. }));
    }

    #[test]
    fn empty_region_is_flagged() {
        let g = Grid1D::new(0.0, 1.0, 16, BoundaryKind::NoFlux).unwrap();
        let rho = ScalarField::from_fn(g, Quantity::Density, |x| if x > 0.8 { 0.0 } else { 1.0 }).unwrap();
        let inv = invert_ideal(&single(rho, vec![0.0; 17]), 0.1, DEFAULT_CONTINUITY_TOL).unwrap();
        assert_eq!(inv.unidentified[0], vec![13, 14, 15]);
    }
}
