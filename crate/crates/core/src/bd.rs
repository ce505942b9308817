//! Overdamped Langevin (Euler–Maruyama) sampler for the same N-body
//! dynamics, with histogram and face-crossing estimators for `ρ`, `ρ₂`
//! and `j`.
//!
//! Noise is drawn from a counter-based stream: replica `r` uses ChaCha8
//! stream `r` of the run seed, and the normal variate of particle `i` at
//! step `s` sits at a fixed word offset. Trajectories therefore do not
//! depend on how replicas are scheduled across threads.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{BoundaryKind, Grid1D, Quantity, ScalarField, VectorField};
use crate::nbody::NBodyModel;
use crate::tensor::DensityTensor;

/// Largest pair-histogram resolution per axis.
pub const MAX_PAIR_BINS: usize = 128;

/// Key offset separating initial-condition draws from dynamics noise.
const INIT_KEY: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    n_replicas: usize,
    n_particles: usize,
    /// Replica-major positions.
    positions: Vec<f64>,
    /// Accumulated unwrapped, unreflected increments per particle.
    displacements: Vec<f64>,
    t: f64,
    step: u64,
    seed: u64,
}

fn uniform(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn normal(a: u64, b: u64) -> f64 {
    let u1 = 1.0 - uniform(a);
    let u2 = uniform(b);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn stream(seed: u64, replica: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica as u64);
    rng
}

/// Folds a position back into the domain.
fn confine(grid: &Grid1D, mut x: f64) -> f64 {
    let (a, b) = (grid.x_min(), grid.x_max());
    if grid.bc().is_periodic() {
        let y = a + (x - a).rem_euclid(b - a);
        return if y >= b { a } else { y };
    }
    while x < a || x > b {
        x = if x < a { 2.0 * a - x } else { 2.0 * b - x };
    }
    x
}

impl Ensemble {
    pub fn new(seed: u64, n_replicas: usize, n_particles: usize, positions: Vec<f64>, grid: &Grid1D) -> Result<Self> {
        if n_replicas == 0 || n_particles == 0 {
            return Err(Error::InvalidParameter("ensemble needs at least one replica and one particle".into()));
        }
        if positions.len() != n_replicas * n_particles {
            return Err(Error::InvalidParameter(format!(
                "expected {} positions, got {}",
                n_replicas * n_particles,
                positions.len()
            )));
        }
        if let Some(index) = positions.iter().position(|&x| !(x >= grid.x_min() && x <= grid.x_max())) {
            return Err(Error::OutOfRange(format!("particle {index} at {} lies outside the domain", positions[index])));
        }
        Ok(Self {
            n_replicas,
            n_particles,
            displacements: vec![0.0; positions.len()],
            positions,
            t: 0.0,
            step: 0,
            seed,
        })
    }

    /// Independent particle positions drawn from the normalized shape of `rho`
    /// (piecewise constant per cell).
    pub fn from_density(seed: u64, n_replicas: usize, n_particles: usize, rho: &ScalarField) -> Result<Self> {
        let grid = *rho.grid();
        let total: f64 = rho.values().iter().sum();
        if !(total > 0.0) {
            return Err(Error::Degenerate("cannot sample from a zero density".into()));
        }
        let mut cdf = Vec::with_capacity(rho.values().len());
        let mut acc = 0.0;
        for v in rho.values() {
            acc += v / total;
            cdf.push(acc);
        }
        let dx = grid.dx();
        let positions: Vec<f64> = (0..n_replicas)
            .into_par_iter()
            .flat_map_iter(|r| {
                let mut rng = stream(seed ^ INIT_KEY, r);
                let cdf = &cdf;
                (0..n_particles)
                    .map(move |_| {
                        let u = uniform(rng.next_u64());
                        let cell = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
                        grid.x_min() + (cell as f64 + uniform(rng.next_u64())) * dx
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        Self::new(seed, n_replicas, n_particles, positions, &grid)
    }

    pub fn n_replicas(&self) -> usize {
        self.n_replicas
    }
    pub fn n_particles(&self) -> usize {
        self.n_particles
    }
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }
    pub fn displacements(&self) -> &[f64] {
        &self.displacements
    }
    pub fn t(&self) -> f64 {
        self.t
    }
    pub fn step_count(&self) -> u64 {
        self.step
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn replica(&self, r: usize) -> &[f64] {
        &self.positions[r * self.n_particles..(r + 1) * self.n_particles]
    }
}

/// One Euler–Maruyama step `x ← x + βD F Δt + √(2DΔt) ξ` for every replica.
///
/// Walls reflect specularly under `NoFlux`; positions wrap under
/// `Periodic`. Prescribed-flux walls have no particle-level rule.
pub fn bd_step(e: &Ensemble, model: &NBodyModel, dt: f64) -> Result<Ensemble> {
    let grid = model.grid;
    if matches!(grid.bc(), BoundaryKind::PrescribedNormalFlux { .. }) {
        return Err(Error::InvalidParameter(
            "Brownian dynamics supports no-flux and periodic boundaries only".into(),
        ));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
    }
    if e.n_particles != model.n_particles {
        return Err(Error::InvalidParameter(format!(
            "ensemble has {} particles per replica, model expects {}",
            e.n_particles, model.n_particles
        )));
    }
    let np = e.n_particles;
    let drift = model.beta * model.diffusion * dt;
    let noise = (2.0 * model.diffusion * dt).sqrt();
    let word = (e.step as u128) * (np as u128) * 4;
    let mut positions = e.positions.clone();
    let mut displacements = e.displacements.clone();
    positions
        .par_chunks_mut(np)
        .zip(displacements.par_chunks_mut(np))
        .enumerate()
        .for_each(|(r, (xs, ds))| {
            let mut rng = stream(e.seed, r);
            rng.set_word_pos(word);
            let old = e.replica(r);
            for i in 0..np {
                let mut force = model.drive.force_at(&grid, old[i], e.t);
                if !model.pair.is_none() {
                    for (k, &y) in old.iter().enumerate() {
                        if k != i {
                            force += model.pair.conservative_force(old[i], y);
                        }
                    }
                }
                let (a, b) = (rng.next_u64(), rng.next_u64());
                let dx = drift * force + noise * normal(a, b);
                ds[i] += dx;
                xs[i] = confine(&grid, old[i] + dx);
            }
        });
    Ok(Ensemble { positions, displacements, t: e.t + dt, step: e.step + 1, ..e.clone() })
}

/// Fields estimated from an ensemble history, with per-bin standard errors.
#[derive(Debug, Clone)]
pub struct FieldEstimate {
    /// Histogram density, integrating to `N`.
    pub rho: ScalarField,
    pub rho_se: Vec<f64>,
    /// Pair histogram over both particle orderings, integrating to `N(N-1)`.
    pub rho2: Option<DensityTensor>,
    pub rho2_se: Vec<f64>,
    /// Net face-crossing rate per replica.
    pub j: VectorField,
    pub j_se: Vec<f64>,
    /// Cells with no samples; their relative error is infinite.
    pub empty_bins: Vec<usize>,
    /// Replica-particle samples behind `rho`.
    pub samples: u64,
}

impl FieldEstimate {
    /// `se / |ρ|`, infinite for empty bins.
    pub fn rho_relative_error(&self) -> Vec<f64> {
        self.rho
            .values()
            .iter()
            .zip(&self.rho_se)
            .map(|(v, s)| if *v > 0.0 { s / v } else { f64::INFINITY })
            .collect()
    }
}

/// Accumulates histograms and face crossings; integer counts make the
/// merge exact and order independent.
#[derive(Debug, Clone)]
pub struct FieldEstimator {
    grid: Grid1D,
    pair_grid: Option<Grid1D>,
    n_replicas: usize,
    n_particles: usize,
    n_batches: usize,
    /// Per-batch tallies, batch-major.
    counts: Vec<u64>,
    pair_counts: Vec<u64>,
    crossings: Vec<i64>,
    snapshots: u64,
    elapsed: f64,
}

/// Upper limit on replica batches used for standard errors.
pub const MAX_BATCHES: usize = 32;

#[derive(Default)]
struct Partial {
    counts: Vec<u64>,
    pair_counts: Vec<u64>,
    crossings: Vec<i64>,
}

impl Partial {
    fn merge(mut self, other: Partial) -> Partial {
        fn add<T: Copy + std::ops::AddAssign>(a: &mut Vec<T>, b: Vec<T>) {
            if a.is_empty() {
                *a = b;
            } else if !b.is_empty() {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
        }
        add(&mut self.counts, other.counts);
        add(&mut self.pair_counts, other.pair_counts);
        add(&mut self.crossings, other.crossings);
        self
    }
}

fn bin(grid: &Grid1D, x: f64) -> usize {
    grid.cell_of(x).min(grid.n_cells() - 1)
}

/// Pooled ratio `Σc / Σw` over batches with its batch-means standard error.
/// With a single batch the tally is treated as Poisson.
fn ratio_estimate(c: impl Iterator<Item = f64> + Clone, w: &[f64]) -> (f64, f64) {
    let (sc, sw) = (c.clone().sum::<f64>(), w.iter().sum::<f64>());
    let r = sc / sw;
    let b = w.len();
    if b < 2 {
        return (r, sc.abs().sqrt() / sw);
    }
    let ss: f64 = c.zip(w).map(|(c, w)| (c - r * w).powi(2)).sum();
    (r, (ss * b as f64 / (b as f64 - 1.0)).sqrt() / sw)
}

impl FieldEstimator {
    /// `pair_bins` sets the pair-histogram resolution (4..=128 per axis);
    /// `None` skips `ρ₂`.
    pub fn new(grid: Grid1D, pair_bins: Option<usize>, n_replicas: usize, n_particles: usize) -> Result<Self> {
        let pair_grid = match pair_bins {
            Some(m) if m > MAX_PAIR_BINS => {
                return Err(Error::InvalidParameter(format!("pair histogram limited to {MAX_PAIR_BINS} bins, got {m}")))
            }
            Some(_) if n_particles < 2 => {
                return Err(Error::InvalidParameter("pair histogram needs at least two particles".into()))
            }
            Some(m) => Some(Grid1D::new(grid.x_min(), grid.x_max(), m, grid.bc())?),
            None => None,
        };
        if n_replicas == 0 {
            return Err(Error::InvalidParameter("need at least one replica".into()));
        }
        let n = grid.n_cells();
        let n_batches = n_replicas.min(MAX_BATCHES);
        Ok(Self {
            grid,
            pair_grid,
            n_replicas,
            n_particles,
            n_batches,
            counts: vec![0; n_batches * n],
            pair_counts: vec![0; n_batches * pair_grid.map_or(0, |g| g.n_cells().pow(2))],
            crossings: vec![0; n_batches * (n + 1)],
            snapshots: 0,
            elapsed: 0.0,
        })
    }

    fn batch_of(&self, replica: usize) -> usize {
        replica * self.n_batches / self.n_replicas
    }

    fn batch_sizes(&self) -> Vec<f64> {
        let mut sizes = vec![0.0; self.n_batches];
        for r in 0..self.n_replicas {
            sizes[self.batch_of(r)] += 1.0;
        }
        sizes
    }

    fn check(&self, e: &Ensemble) -> Result<()> {
        if e.n_replicas != self.n_replicas || e.n_particles != self.n_particles {
            return Err(Error::InvalidParameter("ensemble shape differs from the estimator's".into()));
        }
        Ok(())
    }

    /// Adds the positions of one snapshot to the histograms.
    pub fn add_snapshot(&mut self, e: &Ensemble) -> Result<()> {
        self.check(e)?;
        let (grid, pair_grid) = (self.grid, self.pair_grid);
        let np = self.n_particles;
        let (n, m2) = (grid.n_cells(), pair_grid.map_or(0, |g| g.n_cells().pow(2)));
        let nb = self.n_batches;
        let part = e
            .positions
            .par_chunks(np)
            .enumerate()
            .fold(Partial::default, |mut acc, (r, xs)| {
                if acc.counts.is_empty() {
                    acc.counts = vec![0; nb * n];
                    acc.pair_counts = vec![0; nb * m2];
                }
                let b = self.batch_of(r);
                for &x in xs {
                    acc.counts[b * n + bin(&grid, x)] += 1;
                }
                if let Some(pg) = pair_grid {
                    let m = pg.n_cells();
                    for a in 0..np {
                        for c in 0..np {
                            if a != c {
                                acc.pair_counts[b * m2 + bin(&pg, xs[a]) * m + bin(&pg, xs[c])] += 1;
                            }
                        }
                    }
                }
                acc
            })
            .reduce(Partial::default, Partial::merge);
        if !part.counts.is_empty() {
            self.counts.iter_mut().zip(part.counts).for_each(|(a, b)| *a += b);
            self.pair_counts.iter_mut().zip(part.pair_counts).for_each(|(a, b)| *a += b);
        }
        self.snapshots += 1;
        Ok(())
    }

    /// Counts the net face crossings between two consecutive states of the
    /// same ensemble and adds the elapsed time.
    pub fn add_transition(&mut self, before: &Ensemble, after: &Ensemble) -> Result<()> {
        self.check(before)?;
        self.check(after)?;
        let dt = after.t - before.t;
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter("transition must advance time".into()));
        }
        let grid = self.grid;
        let n = grid.n_cells();
        let nb = self.n_batches;
        let np = self.n_particles;
        let period = grid.bc().is_periodic().then(|| grid.length());
        let part = (0..before.positions.len())
            .into_par_iter()
            .fold(Partial::default, |mut acc, k| {
                if acc.crossings.is_empty() {
                    acc.crossings = vec![0; nb * (n + 1)];
                }
                let base = self.batch_of(k / np) * (n + 1);
                let u = before.positions[k];
                let v = match period {
                    Some(_) => u + (after.displacements[k] - before.displacements[k]),
                    None => after.positions[k],
                };
                // lattice faces x_min + m dx with lo < face <= hi, each crossed once
                let (lo, hi, sign) = if u <= v { (u, v, 1) } else { (v, u, -1) };
                let k0 = ((lo - grid.x_min()) / grid.dx()).floor() as i64 + 1;
                let k1 = ((hi - grid.x_min()) / grid.dx()).floor() as i64;
                for m in k0..=k1 {
                    let f = match period {
                        Some(_) => m.rem_euclid(n as i64) as usize,
                        None => m.clamp(0, n as i64) as usize,
                    };
                    acc.crossings[base + f] += sign;
                }
                acc
            })
            .reduce(Partial::default, Partial::merge);
        if !part.crossings.is_empty() {
            self.crossings.iter_mut().zip(part.crossings).for_each(|(a, b)| *a += b);
        }
        if period.is_some() {
            for b in 0..nb {
                self.crossings[b * (n + 1) + n] = self.crossings[b * (n + 1)];
            }
        }
        self.elapsed += dt;
        Ok(())
    }

    /// Pooled estimates; standard errors are batch means over independent
    /// groups of replicas, so they account for correlations in time and
    /// between the particles of one replica.
    pub fn finish(&self) -> Result<FieldEstimate> {
        if self.snapshots == 0 {
            return Err(Error::TooFewFrames { needed: 1, got: 0 });
        }
        let grid = self.grid;
        let n = grid.n_cells();
        let sizes = self.batch_sizes();
        let per_bin = |tally: &[u64], width: usize, scale: f64| -> (Vec<f64>, Vec<f64>) {
            let w: Vec<f64> = sizes.iter().map(|s| s * self.snapshots as f64 * scale).collect();
            (0..width)
                .map(|i| ratio_estimate((0..self.n_batches).map(|b| tally[b * width + i] as f64), &w))
                .unzip()
        };
        let (rho, rho_se) = per_bin(&self.counts, n, grid.dx());
        let totals: Vec<u64> = (0..n).map(|i| (0..self.n_batches).map(|b| self.counts[b * n + i]).sum()).collect();
        let empty_bins = totals.iter().enumerate().filter(|(_, &c)| c == 0).map(|(i, _)| i).collect();
        let (rho2, rho2_se) = match self.pair_grid {
            Some(pg) => {
                let (v, se) = per_bin(&self.pair_counts, pg.n_cells().pow(2), pg.dx() * pg.dx());
                (Some(DensityTensor::new(pg, 2, v)?), se)
            }
            None => (None, Vec::new()),
        };
        let (j, j_se) = if self.elapsed > 0.0 {
            let w: Vec<f64> = sizes.iter().map(|s| s * self.elapsed).collect();
            (0..=n)
                .map(|f| ratio_estimate((0..self.n_batches).map(|b| self.crossings[b * (n + 1) + f] as f64), &w))
                .unzip()
        } else {
            (vec![0.0; grid.n_faces()], vec![f64::INFINITY; grid.n_faces()])
        };
        Ok(FieldEstimate {
            rho: ScalarField::new(grid, Quantity::Density, rho)?,
            rho_se,
            rho2,
            rho2_se,
            j: VectorField::new(grid, Quantity::Current, j)?,
            j_se,
            empty_bins,
            samples: totals.iter().sum(),
        })
    }
}

/// Estimates fields from a sequence of snapshots of one ensemble.
pub fn estimate_fields(history: &[Ensemble], grid: &Grid1D, pair_bins: Option<usize>) -> Result<FieldEstimate> {
    let first = history.first().ok_or(Error::TooFewFrames { needed: 1, got: 0 })?;
    let mut est = FieldEstimator::new(*grid, pair_bins, first.n_replicas, first.n_particles)?;
    for e in history {
        est.add_snapshot(e)?;
    }
    for w in history.windows(2) {
        est.add_transition(&w[0], &w[1])?;
    }
    est.finish()
}

/// Advances `steps` steps, recording a snapshot every `sample_every` steps
/// and every transition into `est`.
pub fn run_sampling(
    model: &NBodyModel,
    e: &Ensemble,
    dt: f64,
    steps: usize,
    sample_every: usize,
    mut est: Option<&mut FieldEstimator>,
) -> Result<Ensemble> {
    if sample_every == 0 {
        return Err(Error::InvalidParameter("sample_every must be positive".into()));
    }
    let mut cur = e.clone();
    for s in 1..=steps {
        let next = bd_step(&cur, model, dt)?;
        if let Some(est) = est.as_deref_mut() {
            est.add_transition(&cur, &next)?;
            if s % sample_every == 0 {
                est.add_snapshot(&next)?;
            }
        }
        cur = next;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interactions::{ExternalDrive, PairInteraction, PairKind};

    fn free(bc: BoundaryKind, n_particles: usize) -> NBodyModel {
        NBodyModel::ideal(Grid1D::new(0.0, 2.0, 16, bc).unwrap(), n_particles, ExternalDrive::default())
    }

    fn start(m: &NBodyModel, seed: u64, replicas: usize) -> Ensemble {
        let rho = ScalarField::constant(m.grid, Quantity::Density, 1.0).unwrap();
        Ensemble::from_density(seed, replicas, m.n_particles, &rho).unwrap()
    }

    #[test]
    fn confine_reflects_and_wraps() {
        let g = Grid1D::new(0.0, 1.0, 8, BoundaryKind::NoFlux).unwrap();
        assert!((confine(&g, -0.25) - 0.25).abs() < 1e-15);
        assert!((confine(&g, 1.25) - 0.75).abs() < 1e-15);
        assert!((confine(&g, 2.5) - 0.5).abs() < 1e-15);
        let p = g.with_bc(BoundaryKind::Periodic);
        assert!((confine(&p, 1.25) - 0.25).abs() < 1e-15);
        assert!((confine(&p, -0.25) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn trajectories_do_not_depend_on_thread_count() {
        let m = free(BoundaryKind::NoFlux, 3).with_pair(
            PairInteraction::new(PairKind::GaussianCore { epsilon: 1.0, sigma: 0.3 }, &Grid1D::new(0.0, 2.0, 16, BoundaryKind::NoFlux).unwrap())
                .unwrap(),
        );
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| run_sampling(&m, &start(&m, 7, 64), 1e-3, 50, 1, None).unwrap())
        };
        let (a, b) = (run(1), run(4));
        assert_eq!(a.positions(), b.positions());
        assert_ne!(start(&m, 7, 64).positions(), start(&m, 8, 64).positions());
    }

    #[test]
    fn histograms_are_normalized() {
        let m = free(BoundaryKind::NoFlux, 3);
        let e = start(&m, 1, 500);
        let est = estimate_fields(&[e], &m.grid, Some(8)).unwrap();
        let total: f64 = est.rho.values().iter().sum::<f64>() * m.grid.dx();
        assert!((total - 3.0).abs() < 1e-12);
        assert!((est.rho2.unwrap().integral() - 6.0).abs() < 1e-12);
        assert!(FieldEstimator::new(m.grid, Some(256), 1, 3).is_err());
    }

    #[test]
    fn empty_bins_are_flagged() {
        let m = free(BoundaryKind::NoFlux, 1);
        let e = Ensemble::new(0, 2, 1, vec![0.1, 0.2], &m.grid).unwrap();
        let est = estimate_fields(&[e], &m.grid, None).unwrap();
        assert_eq!(est.empty_bins.len(), 14);
        assert!(est.rho_relative_error()[5].is_infinite());
    }

    #[test]
    fn periodic_crossings_follow_unwrapped_path() {
        let g = Grid1D::new(0.0, 1.0, 4, BoundaryKind::Periodic).unwrap();
        let mut before = Ensemble::new(0, 1, 1, vec![0.9], &g).unwrap();
        before.t = 0.0;
        let mut after = before.clone();
        after.positions = vec![0.4];
        after.displacements = vec![0.5];
        after.t = 1.0;
        let mut est = FieldEstimator::new(g, None, 1, 1).unwrap();
        est.add_snapshot(&before).unwrap();
        est.add_transition(&before, &after).unwrap();
        let j = est.finish().unwrap().j;
        // path 0.9 -> 1.4 crosses the seam (face 0 = face 4) and face 1 at 0.25
        assert_eq!(j.values(), &[1.0, 1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn free_diffusion_msd() {
        let m = free(BoundaryKind::Periodic, 1);
        let e = run_sampling(&m, &start(&m, 3, 20_000), 1e-3, 200, 1, None).unwrap();
        let d2: Vec<f64> = e.displacements().iter().map(|d| d * d).collect();
        let mean = d2.iter().sum::<f64>() / d2.len() as f64;
        let var = d2.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (d2.len() - 1) as f64;
        let se = (var / d2.len() as f64).sqrt();
        assert!((mean - 2.0 * 0.2).abs() < 3.0 * se, "msd {mean} se {se}");
    }

    #[test]
    fn prescribed_flux_is_rejected() {
        use crate::fields::FluxSchedule;
        let bc = BoundaryKind::PrescribedNormalFlux { left: FluxSchedule::constant(1.0), right: FluxSchedule::constant(1.0) };
        let m = free(bc, 1);
        let e = Ensemble::new(0, 1, 1, vec![0.5], &m.grid).unwrap();
        assert!(bd_step(&e, &m, 1e-3).is_err());
    }
}
