//! Direct tensor-grid solver for the N-body Smoluchowski equation
//! (`N ≤ 3`), the n-body reduction operator and residuals of the reduced
//! hierarchy.
//!
//! Each particle `i` has its own face-staggered current
//! `J_i = -D ∂_i P + Dβ P F_i` with `F_i = -∂_i Φ + R` and
//! `Φ = Σ_k V(x_k) + Σ_{k<l} U(x_k - x_l)`. Faces use the logarithmic-mean
//! density as in the one-body solver, so the Boltzmann distribution of `Φ`
//! is an exact discrete fixed point.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{density_ln, log_mean_with_logs, Grid1D, Quantity, TimeSeries, VectorField};
use crate::fpe1::{clip, TimeScheme};
use crate::interactions::{face_force_table, ExternalDrive, PairInteraction};
use crate::tensor::DensityTensor;

/// Largest admissible number of tensor-grid cells `n_cells^N`.
pub const CELL_BUDGET: usize = 1 << 22;

#[derive(Debug, Clone)]
pub struct NBodyModel {
    pub grid: Grid1D,
    pub n_particles: usize,
    pub beta: f64,
    pub diffusion: f64,
    pub drive: ExternalDrive,
    pub pair: PairInteraction,
    pub scheme: TimeScheme,
}

/// Symmetric N-body probability density at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NBodyDensity {
    pub t: f64,
    pub p: DensityTensor,
}

/// Per-particle face currents. Component `i` has `n + 1` entries along
/// axis `i` and `n` along every other axis, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NBodyCurrent {
    grid: Grid1D,
    n_particles: usize,
    components: Vec<Vec<f64>>,
}

fn check_budget(grid: &Grid1D, n_particles: usize) -> Result<usize> {
    if !(1..=3).contains(&n_particles) {
        return Err(Error::InvalidParameter(format!("N-body solver supports 1 <= N <= 3, got {n_particles}")));
    }
    let cells = grid.n_cells().checked_pow(n_particles as u32).unwrap_or(usize::MAX);
    if cells > CELL_BUDGET {
        return Err(Error::BudgetExceeded { cells, budget: CELL_BUDGET });
    }
    Ok(cells)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 1 {
        return vec![vec![0]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Strides of a current component whose axis `axis` carries faces.
fn component_strides(n: usize, rank: usize, axis: usize) -> [usize; 3] {
    let mut s = [0; 3];
    let mut acc = 1;
    for k in (0..rank).rev() {
        s[k] = acc;
        acc *= if k == axis { n + 1 } else { n };
    }
    s
}

fn component_len(n: usize, rank: usize) -> usize {
    n.pow(rank as u32 - 1) * (n + 1)
}

impl NBodyDensity {
    /// Validates normalization (1e-8), non-negativity and exchange symmetry (1e-10).
    pub fn new(p: DensityTensor) -> Result<Self> {
        check_budget(p.grid(), p.rank())?;
        if let Some(index) = p.values().iter().position(|&v| v < 0.0) {
            return Err(Error::NegativeDensity { index, value: p.values()[index] });
        }
        let total = p.integral();
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidParameter(format!("N-body density integrates to {total}, expected 1")));
        }
        let asym = p.exchange_asymmetry();
        if asym > 1e-10 {
            return Err(Error::InvalidParameter(format!("N-body density is not exchange symmetric (deviation {asym:e})")));
        }
        Ok(Self { t: 0.0, p })
    }

    /// Symmetrizes over all particle permutations and normalizes to 1.
    pub fn symmetrized(p: &DensityTensor) -> Result<Self> {
        let rank = p.rank();
        check_budget(p.grid(), rank)?;
        let perms = permutations(rank);
        let mut idx = vec![0; rank];
        let mut q = vec![0; rank];
        let mut values = vec![0.0; p.values().len()];
        for (flat, out) in values.iter_mut().enumerate() {
            p.unflatten(flat, &mut idx);
            let mut acc = 0.0;
            for perm in &perms {
                for k in 0..rank {
                    q[k] = idx[perm[k]];
                }
                acc += p.get(&q);
            }
            *out = acc / perms.len() as f64;
        }
        let t = DensityTensor::new(*p.grid(), rank, values)?;
        let total = t.integral();
        if !(total > 0.0) {
            return Err(Error::Degenerate("N-body density has zero mass".into()));
        }
        Self::new(t.scaled(1.0 / total))
    }

    /// Product state `Π p(x_k)` with `p` normalized to 1.
    pub fn product(p: &[f64], grid: Grid1D, n_particles: usize) -> Result<Self> {
        check_budget(&grid, n_particles)?;
        let s = p.iter().sum::<f64>() * grid.dx();
        let n = grid.n_cells();
        let t = DensityTensor::from_fn(grid, n_particles, |x| {
            x.iter().map(|&xi| p[grid.cell_of(xi).min(n - 1)] / s).product()
        })?;
        Self::new(t)
    }

    /// `P ∝ exp(-βΦ)` at `t = 0`.
    pub fn boltzmann(model: &NBodyModel) -> Result<Self> {
        let grid = model.grid;
        let n = grid.n_cells();
        check_budget(&grid, model.n_particles)?;
        let v = model.drive.potential_at(&grid, 0.0)?;
        let c = grid.cell_centers();
        let raw = DensityTensor::from_fn(grid, model.n_particles, |x| {
            let idx: Vec<usize> = x.iter().map(|&xi| grid.cell_of(xi).min(n - 1)).collect();
            let mut phi: f64 = idx.iter().map(|&i| v[i]).sum();
            for a in 0..idx.len() {
                for b in a + 1..idx.len() {
                    phi += model.pair.potential(c[idx[a]], c[idx[b]]);
                }
            }
            phi
        })?;
        let pmin = raw.values().iter().copied().fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = raw.values().iter().map(|phi| (-model.beta * (phi - pmin)).exp()).collect();
        let total = w.iter().sum::<f64>() * grid.dx().powi(model.n_particles as i32);
        Self::new(DensityTensor::raw(grid, model.n_particles, w.into_iter().map(|x| x / total).collect()))
    }
}

impl NBodyCurrent {
    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }
    pub fn n_particles(&self) -> usize {
        self.n_particles
    }
    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i]
    }

    /// `J_i` at a multi-index whose entry `i` is a face index.
    pub fn get(&self, i: usize, idx: &[usize]) -> f64 {
        let s = component_strides(self.grid.n_cells(), self.n_particles, i);
        self.components[i][idx.iter().zip(s).map(|(a, b)| a * b).sum::<usize>()]
    }

    pub fn max_norm(&self) -> f64 {
        self.components.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// One-body current `j(x) = Σ_i ∫ J_i(x_i = x, rest) d rest` on the faces.
    pub fn one_body(&self) -> VectorField {
        let n = self.grid.n_cells();
        let rank = self.n_particles;
        let w = self.grid.dx().powi(rank as i32 - 1);
        let mut j = vec![0.0; n + 1];
        for (i, comp) in self.components.iter().enumerate() {
            let s = component_strides(n, rank, i);
            for (e, v) in comp.iter().enumerate() {
                j[(e / s[i]) % (n + 1)] += v * w;
            }
        }
        VectorField::raw(self.grid, Quantity::Current, j)
    }
}

/// `ρ_n = N!/(N-n)! ∫ P_N d x_{n+1} .. d x_N`.
pub fn reduce(p: &DensityTensor, n: usize) -> Result<DensityTensor> {
    let big_n = p.rank();
    if n == 0 || n > big_n {
        return Err(Error::OutOfRange(format!("reduction order {n} not in 1..={big_n}")));
    }
    Ok(p.marginal(n)?.scaled(factorial(big_n) / factorial(big_n - n)))
}

/// `Σ_rest [J_i(right wall) - J_i(left wall)] dV` for every particle: the net
/// outflow of `J_i` through the boundary of `Ω^N` along its own axis.
pub fn ybg_boundary_check(j: &NBodyCurrent) -> Vec<f64> {
    let n = j.grid.n_cells();
    let rank = j.n_particles;
    let w = j.grid.dx().powi(rank as i32 - 1);
    (0..rank)
        .map(|i| {
            let s = component_strides(n, rank, i);
            j.components[i]
                .iter()
                .enumerate()
                .map(|(e, v)| match (e / s[i]) % (n + 1) {
                    0 => -v,
                    f if f == n => *v,
                    _ => 0.0,
                })
                .sum::<f64>()
                * w
        })
        .collect()
}

/// Frames of an N-body run.
#[derive(Debug, Clone)]
pub struct NBodyRun {
    pub densities: TimeSeries<DensityTensor>,
    pub dt: f64,
    pub steps: usize,
    /// `max_t |∫P(t) - ∫P(0)|`
    pub mass_drift: f64,
    /// Largest exchange asymmetry over the stored frames.
    pub symmetry_drift: f64,
    pub min_value: f64,
}

impl NBodyModel {
    pub fn ideal(grid: Grid1D, n_particles: usize, drive: ExternalDrive) -> Self {
        Self {
            grid,
            n_particles,
            beta: 1.0,
            diffusion: 1.0,
            drive,
            pair: PairInteraction::none(),
            scheme: TimeScheme::Euler,
        }
    }

    pub fn with_pair(mut self, pair: PairInteraction) -> Self {
        self.pair = pair;
        self
    }

    pub fn with_scheme(mut self, scheme: TimeScheme) -> Self {
        self.scheme = scheme;
        self
    }

    fn check(&self, p: &DensityTensor) -> Result<()> {
        check_budget(&self.grid, self.n_particles)?;
        if p.rank() != self.n_particles || !p.grid().same_mesh(&self.grid) {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// `dx² / (2ND (1 + β F_max dx / D))` with `F_max` bounding the external
    /// plus `(N-1)` pair forces.
    pub fn stability_bound(&self, t: f64) -> Result<f64> {
        let fmax = self.drive.max_force(&self.grid, t)? + (self.n_particles as f64 - 1.0) * self.pair.bound();
        let dx = self.grid.dx();
        let d = self.diffusion;
        Ok(dx * dx / (2.0 * self.n_particles as f64 * d * (1.0 + self.beta * fmax * dx / d)))
    }

    /// Per-particle currents of `p` at time `t`.
    ///
    /// Walls with a prescribed one-body flux `j_b` carry
    /// `J_i(wall, rest) = j_b P(adjacent, rest) / ρ₁⁽ⁱ⁾(adjacent)`, which
    /// reduces to exactly `j_b` in the one-body current.
    pub fn current(&self, p: &DensityTensor, t: f64) -> Result<NBodyCurrent> {
        self.check(p)?;
        let grid = self.grid;
        let n = grid.n_cells();
        let rank = self.n_particles;
        let inv_dx = 1.0 / grid.dx();
        let (d, db) = (self.diffusion, self.diffusion * self.beta);
        let drive = self.drive.face_force(&grid, t)?;
        let kface = face_force_table(&self.pair, &grid);
        let values = p.values();
        let ln: Vec<f64> = values.par_iter().map(|&v| density_ln(v)).collect();
        let bc = grid.bc();
        let walls = bc.wall_currents(t);
        let components = (0..rank)
            .map(|axis| {
                let cs = component_strides(n, rank, axis);
                let marginal = walls.map(|_| axis_marginal(p, axis));
                (0..component_len(n, rank))
                    .into_par_iter()
                    .map(|e| {
                        let mut idx = [0usize; 3];
                        for k in 0..rank {
                            let dim = if k == axis { n + 1 } else { n };
                            idx[k] = (e / cs[k]) % dim;
                        }
                        let f = idx[axis];
                        let (a, b) = if f > 0 && f < n {
                            (f - 1, f)
                        } else if bc.is_periodic() {
                            (n - 1, 0)
                        } else if let (Some((jl, jr)), Some(m)) = (walls, &marginal) {
                            let (adj, jb) = if f == 0 { (0, jl) } else { (n - 1, jr) };
                            idx[axis] = adj;
                            let rho1 = rank as f64 * m[adj];
                            return if rho1 > 0.0 { jb * values[p.flat_index(&idx[..rank])] / rho1 } else { 0.0 };
                        } else {
                            return 0.0;
                        };
                        idx[axis] = a;
                        let fa = p.flat_index(&idx[..rank]);
                        idx[axis] = b;
                        let fb = p.flat_index(&idx[..rank]);
                        let mut force = drive[f];
                        for l in (0..rank).filter(|&l| l != axis) {
                            force += kface[f * n + idx[l]];
                        }
                        let mean = log_mean_with_logs(values[fa], values[fb], ln[fa], ln[fb]);
                        -d * (values[fb] - values[fa]) * inv_dx + db * mean * force
                    })
                    .collect()
            })
            .collect();
        Ok(NBodyCurrent { grid, n_particles: rank, components })
    }

    /// `-Σ_i ∂_i J_i` at the cells.
    fn rate(&self, j: &NBodyCurrent) -> Vec<f64> {
        let n = self.grid.n_cells();
        let rank = self.n_particles;
        let inv_dx = 1.0 / self.grid.dx();
        let strides: Vec<[usize; 3]> = (0..rank).map(|i| component_strides(n, rank, i)).collect();
        (0..n.pow(rank as u32))
            .into_par_iter()
            .map(|flat| {
                let mut idx = [0usize; 3];
                let mut r = flat;
                for k in (0..rank).rev() {
                    idx[k] = r % n;
                    r /= n;
                }
                let mut div = 0.0;
                for (i, s) in strides.iter().enumerate() {
                    let left: usize = (0..rank).map(|k| idx[k] * s[k]).sum();
                    div += j.components[i][left + s[i]] - j.components[i][left];
                }
                -div * inv_dx
            })
            .collect()
    }

    /// Advances `P` by `dt`, enforcing the stability bound.
    pub fn nbody_step(&self, state: &NBodyDensity, dt: f64) -> Result<NBodyDensity> {
        self.check(&state.p)?;
        let bound = self.stability_bound(state.t)?;
        if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
            return Err(Error::StepTooLarge { dt, bound });
        }
        let t = state.t;
        let p0 = state.p.values();
        let r0 = self.rate(&self.current(&state.p, t)?);
        let euler = |r: &[f64]| -> Vec<f64> { p0.par_iter().zip(r).map(|(p, r)| p + dt * r).collect() };
        let next = match self.scheme {
            TimeScheme::Euler => euler(&r0),
            TimeScheme::Heun => {
                let stage = DensityTensor::raw(self.grid, self.n_particles, clip(euler(&r0), t + dt)?);
                let r1 = self.rate(&self.current(&stage, t + dt)?);
                let avg: Vec<f64> = r0.iter().zip(&r1).map(|(a, b)| 0.5 * (a + b)).collect();
                euler(&avg)
            }
        };
        Ok(NBodyDensity { t: t + dt, p: DensityTensor::raw(self.grid, self.n_particles, clip(next, t + dt)?) })
    }

    /// Runs to `t_end` with steps no larger than `dt_max`, storing every
    /// `frame_stride`-th step.
    pub fn run(&self, p0: &NBodyDensity, dt_max: f64, t_end: f64, frame_stride: usize) -> Result<NBodyRun> {
        self.check(&p0.p)?;
        if !(t_end > 0.0 && dt_max > 0.0) || frame_stride == 0 {
            return Err(Error::InvalidParameter("need t_end > 0, dt > 0 and frame_stride >= 1".into()));
        }
        let steps = ((t_end / dt_max - 1e-9).ceil().max(1.0) as usize).div_ceil(frame_stride) * frame_stride;
        let dt = t_end / steps as f64;
        let mut state = NBodyDensity { t: 0.0, p: p0.p.clone() };
        let mass0 = state.p.integral();
        let mut densities = TimeSeries::new();
        densities.push(0.0, state.p.clone())?;
        let mut run = NBodyRun {
            densities: TimeSeries::new(),
            dt,
            steps,
            mass_drift: 0.0,
            symmetry_drift: state.p.exchange_asymmetry(),
            min_value: state.p.values().iter().copied().fold(f64::INFINITY, f64::min),
        };
        for step in 1..=steps {
            state = self.nbody_step(&state, dt)?;
            run.mass_drift = run.mass_drift.max((state.p.integral() - mass0).abs());
            run.min_value = run.min_value.min(state.p.values().iter().copied().fold(f64::INFINITY, f64::min));
            if step % frame_stride == 0 || step == steps {
                let t = if step == steps { t_end } else { step as f64 * dt };
                run.symmetry_drift = run.symmetry_drift.max(state.p.exchange_asymmetry());
                densities.push(t, state.p.clone())?;
            }
        }
        run.densities = densities;
        Ok(run)
    }
}

/// `∫ P dx^{N-1}` over every coordinate except `axis`.
fn axis_marginal(p: &DensityTensor, axis: usize) -> Vec<f64> {
    let n = p.grid().n_cells();
    let s = p.stride(axis);
    let w = p.grid().dx().powi(p.rank() as i32 - 1);
    let mut m = vec![0.0; n];
    for (flat, v) in p.values().iter().enumerate() {
        m[(flat / s) % n] += v * w;
    }
    m
}

/// Boundary line of the reduced equation for `ρ_n`:
/// `B(xⁿ) = -N!/(N-n)! Σ_{k>n} ∫ [J_k(xⁿ, x_k = right wall, rest) - J_k(.., left wall, ..)] d rest`.
///
/// It is the outflow through the walls of the integrated-out coordinates
/// and vanishes identically under no-flux and periodic conditions.
pub fn boundary_term(j: &NBodyCurrent, n: usize) -> Result<DensityTensor> {
    let rank = j.n_particles;
    if n == 0 || n >= rank {
        return Err(Error::OutOfRange(format!("boundary term needs 1 <= n < N = {rank}, got {n}")));
    }
    let cells = j.grid.n_cells();
    let scale = factorial(rank) / factorial(rank - n) * j.grid.dx().powi((rank - n - 1) as i32);
    let mut b = vec![0.0; cells.pow(n as u32)];
    for k in n..rank {
        let s = component_strides(cells, rank, k);
        for (e, v) in j.components[k].iter().enumerate() {
            let sign = match (e / s[k]) % (cells + 1) {
                0 => 1.0,
                f if f == cells => -1.0,
                _ => continue,
            };
            let mut head = 0;
            for m in 0..n {
                head = head * cells + (e / s[m]) % cells;
            }
            b[head] += sign * scale * v;
        }
    }
    Ok(DensityTensor::raw(j.grid, n, b))
}

/// Boundary term of every frame of a run.
pub fn boundary_term_b(model: &NBodyModel, series: &TimeSeries<DensityTensor>, n: usize) -> Result<Vec<DensityTensor>> {
    series.iter().map(|(t, p)| boundary_term(&model.current(p, t)?, n)).collect()
}

/// Reduced current of `ρ_n` along each of its axes, built from `ρ_n` and
/// `ρ_{n+1}` alone: `-D ∂_i ρ_n + Dβ ρ̄_n (F_ext + Σ_{k≠i} K₂) + Dβ E_{n,i}`.
///
/// On each face `ρ̄_n` and `E_{n,i}` integrate the logarithmic mean of
/// `ρ_{n+1}` over the extra coordinate, which reproduces the reduced N-body
/// current exactly for `n = N - 1`.
fn reduced_current(
    model: &NBodyModel,
    rho_n: &DensityTensor,
    rho_np1: &DensityTensor,
    rho1: &[f64],
    t: f64,
) -> Result<Vec<Vec<f64>>> {
    let grid = model.grid;
    let cells = grid.n_cells();
    let n = rho_n.rank();
    let dx = grid.dx();
    let (d, db) = (model.diffusion, model.diffusion * model.beta);
    let drive = model.drive.face_force(&grid, t)?;
    let kface = face_force_table(&model.pair, &grid);
    let extra = (model.n_particles - n) as f64;
    let ln1: Vec<f64> = rho_np1.values().iter().map(|&v| density_ln(v)).collect();
    let r1 = rho_np1.values();
    let walls = grid.bc().wall_currents(t);
    let mut out = Vec::with_capacity(n);
    for axis in 0..n {
        let cs = component_strides(cells, n, axis);
        let comp = (0..component_len(cells, n))
            .into_par_iter()
            .map(|e| {
                let mut idx = [0usize; 3];
                for k in 0..n {
                    let dim = if k == axis { cells + 1 } else { cells };
                    idx[k] = (e / cs[k]) % dim;
                }
                let f = idx[axis];
                let (a, b) = if f > 0 && f < cells {
                    (f - 1, f)
                } else if grid.bc().is_periodic() {
                    (cells - 1, 0)
                } else if let Some((jl, jr)) = walls {
                    let (adj, jb) = if f == 0 { (0, jl) } else { (cells - 1, jr) };
                    idx[axis] = adj;
                    return if rho1[adj] > 0.0 { jb * rho_n.get(&idx[..n]) / rho1[adj] } else { 0.0 };
                } else {
                    return 0.0;
                };
                idx[axis] = a;
                let fa = rho_n.flat_index(&idx[..n]);
                idx[axis] = b;
                let fb = rho_n.flat_index(&idx[..n]);
                let mut force = drive[f];
                for l in (0..n).filter(|&l| l != axis) {
                    force += kface[f * cells + idx[l]];
                }
                let (mut lsum, mut e_face) = (0.0, 0.0);
                for y in 0..cells {
                    let (pa, pb) = (fa * cells + y, fb * cells + y);
                    let l = log_mean_with_logs(r1[pa], r1[pb], ln1[pa], ln1[pb]);
                    lsum += l;
                    e_face += l * kface[f * cells + y];
                }
                let rho_face = lsum * dx / extra;
                let vals = rho_n.values();
                -d * (vals[fb] - vals[fa]) / dx + db * (rho_face * force + e_face * dx)
            })
            .collect();
        out.push(comp);
    }
    Ok(out)
}

/// Per-frame residuals of the reduced equation for `ρ_n`.
#[derive(Debug, Clone)]
pub struct ReducedResidual {
    pub times: Vec<f64>,
    /// `max |∂_t ρ_n + Σ_i ∂_i J_{n,i} - B|`
    pub max_norms: Vec<f64>,
    /// Same residual with the boundary line dropped.
    pub max_norms_without_boundary: Vec<f64>,
    /// `max |B|`
    pub boundary_max: Vec<f64>,
    /// `max |∂_t ρ_n|`, for scale.
    pub rate_max: Vec<f64>,
}

impl ReducedResidual {
    pub fn max(&self) -> f64 {
        self.max_norms.iter().copied().fold(0.0, f64::max)
    }
}

/// Residual of the reduced Smoluchowski equation for `ρ_n` (`n < N`) over
/// stored N-body frames, with centered time differences.
pub fn reduced_residual(model: &NBodyModel, series: &TimeSeries<DensityTensor>, n: usize) -> Result<ReducedResidual> {
    if n == 0 || n >= model.n_particles {
        return Err(Error::OutOfRange(format!("reduced residual needs 1 <= n < N = {}, got {n}", model.n_particles)));
    }
    if series.len() < 3 {
        return Err(Error::TooFewFrames { needed: 3, got: series.len() });
    }
    let h = series
        .uniform_step()
        .ok_or_else(|| Error::InvalidParameter("reduced residual needs uniformly spaced frames".into()))?;
    let cells = model.grid.n_cells();
    let dx = model.grid.dx();
    let times = series.times();
    let frames = series.frames();
    let mut out = ReducedResidual {
        times: Vec::new(),
        max_norms: Vec::new(),
        max_norms_without_boundary: Vec::new(),
        boundary_max: Vec::new(),
        rate_max: Vec::new(),
    };
    for k in 1..frames.len() - 1 {
        let t = times[k];
        let rho_n = reduce(&frames[k], n)?;
        let rho_np1 = reduce(&frames[k], n + 1)?;
        let rho1 = reduce(&frames[k], 1)?.into_values();
        let comps = reduced_current(model, &rho_n, &rho_np1, &rho1, t)?;
        let b = boundary_term(&model.current(&frames[k], t)?, n)?;
        let next = reduce(&frames[k + 1], n)?;
        let prev = reduce(&frames[k - 1], n)?;
        let strides: Vec<[usize; 3]> = (0..n).map(|i| component_strides(cells, n, i)).collect();
        let (mut res, mut res_nb, mut bmax, mut rate) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let mut idx = vec![0usize; n];
        for flat in 0..rho_n.values().len() {
            rho_n.unflatten(flat, &mut idx);
            let dt_rho = (next.values()[flat] - prev.values()[flat]) / (2.0 * h);
            let mut div = 0.0;
            for (i, s) in strides.iter().enumerate() {
                let left: usize = (0..n).map(|m| idx[m] * s[m]).sum();
                div += (comps[i][left + s[i]] - comps[i][left]) / dx;
            }
            let bv = b.values()[flat];
            res = res.max((dt_rho + div - bv).abs());
            res_nb = res_nb.max((dt_rho + div).abs());
            bmax = bmax.max(bv.abs());
            rate = rate.max(dt_rho.abs());
        }
        out.times.push(t);
        out.max_norms.push(res);
        out.max_norms_without_boundary.push(res_nb);
        out.boundary_max.push(bmax);
        out.rate_max.push(rate);
    }
    Ok(out)
}
