//! Uniqueness probes for the density-to-potential map: Taylor coefficients
//! of a potential difference at `t = 0`, the smallest order at which it is
//! not a pure gauge, the leading-order density and current differences,
//! the surface criterion and the discrete energy identity.
//!
//! Throughout, `d = V - V'` and `d⁽ᵏ⁾ = ∂_t^k d |_{t=0}`.

use crate::error::{Error, Result};
use crate::fields::{
    boundary_values, face_divergence, face_gradient, log_mean, max_abs, BoundaryKind, Grid1D, Quantity, ScalarField,
    TimeSeries, VectorField,
};
use crate::fpe1::Fpe1Model;
use crate::interactions::Potential;
use crate::nbody::{reduce, NBodyDensity, NBodyModel};

/// Largest order differenced from sampled potentials.
pub const MAX_SAMPLED_ORDER: usize = 4;
/// Largest order searched for a non-gauge coefficient.
pub const MAX_ORDER: usize = 4;
/// Relative threshold turning "not identically zero" into a number.
pub const REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialDifference {
    /// `d⁽ᵏ⁾` for `k = 0..=k_max`.
    pub taylor: Vec<ScalarField>,
    pub k_max: usize,
    /// Whether the coefficients are exact rather than differenced.
    pub analytic: bool,
    /// `max |∇(V - V')|` at the probe time `t = 1`, when known.
    pub probe_gradient: Option<f64>,
}

impl PotentialDifference {
    pub fn grid(&self) -> &Grid1D {
        self.taylor[0].grid()
    }
}

/// Exact coefficients for analytic potentials.
pub fn taylor_coefficients(v: &Potential, v_primed: &Potential, grid: &Grid1D, k_max: usize) -> Result<PotentialDifference> {
    let d = v.plus(&v_primed.negated());
    let taylor = (0..=k_max).map(|k| d.sample_time_derivative(grid, 0.0, k)).collect::<Result<Vec<_>>>()?;
    let probe = d.sample(grid, 1.0)?;
    Ok(PotentialDifference {
        taylor,
        k_max,
        analytic: true,
        probe_gradient: Some(gradient_norm(&probe)),
    })
}

/// `Δ^k f(0) / h^k` from samples at `0, h, .., k h`.
fn forward_difference(samples: &[&[f64]], k: usize, h: f64) -> Vec<f64> {
    let n = samples[0].len();
    let mut out = vec![0.0; n];
    let mut binom = 1.0;
    for m in 0..=k {
        let sign = if (k - m).is_multiple_of(2) { 1.0 } else { -1.0 };
        for (o, v) in out.iter_mut().zip(samples[m]) {
            *o += sign * binom * v;
        }
        binom = binom * (k - m) as f64 / (m + 1) as f64;
    }
    let scale = h.powi(k as i32);
    out.iter_mut().for_each(|o| *o /= scale);
    out
}

/// Two Richardson passes over forward differences at steps `h, h/2, h/4`
/// (error `O(h³)`).
fn richardson(coarse: &[f64], mid: &[f64], fine: &[f64]) -> Vec<f64> {
    (0..coarse.len())
        .map(|i| {
            let r1 = 2.0 * mid[i] - coarse[i];
            let r2 = 2.0 * fine[i] - mid[i];
            (4.0 * r2 - r1) / 3.0
        })
        .collect()
}

/// `k`-th derivative at `t = 0` of a sampled quantity, where `at(s)`
/// returns the samples at times `j h / 2^s`, `j = 0..=k`.
fn derivative_at_zero(k: usize, h: f64, mut at: impl FnMut(usize) -> Result<Vec<Vec<f64>>>) -> Result<Vec<f64>> {
    let mut levels = Vec::with_capacity(3);
    for s in 0..3 {
        let samples = at(s)?;
        let refs: Vec<&[f64]> = samples.iter().map(|v| v.as_slice()).collect();
        levels.push(forward_difference(&refs, k, h / f64::from(1u32 << s)));
    }
    Ok(if k == 0 { levels.swap_remove(0) } else { richardson(&levels[0], &levels[1], &levels[2]) })
}

/// Coefficients from a sampler `t ↦ d(·, t)` using one-sided differences
/// with steps `h, h/2, h/4` and Richardson extrapolation.
pub fn taylor_from_sampler(
    grid: &Grid1D,
    k_max: usize,
    h: f64,
    mut sampler: impl FnMut(f64) -> Result<ScalarField>,
) -> Result<PotentialDifference> {
    if k_max > MAX_SAMPLED_ORDER {
        return Err(Error::OrderTooHigh { k_max, max: MAX_SAMPLED_ORDER });
    }
    if !(h > 0.0) {
        return Err(Error::InvalidParameter("difference step must be positive".into()));
    }
    let mut taylor = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        let values = derivative_at_zero(k, h, |s| {
            let hs = h / f64::from(1u32 << s);
            (0..=k)
                .map(|j| {
                    let f = sampler(j as f64 * hs)?;
                    f.check_grid(grid)?;
                    Ok(f.into_values())
                })
                .collect()
        })?;
        taylor.push(ScalarField::new(*grid, Quantity::Potential, values)?);
    }
    Ok(PotentialDifference { taylor, k_max, analytic: false, probe_gradient: None })
}

/// Coefficients from a uniformly sampled series of `d(·, t)` frames, using
/// steps of 4, 2 and 1 frame spacings.
pub fn taylor_from_series(series: &TimeSeries<ScalarField>, k_max: usize) -> Result<PotentialDifference> {
    if k_max > MAX_SAMPLED_ORDER {
        return Err(Error::OrderTooHigh { k_max, max: MAX_SAMPLED_ORDER });
    }
    let needed = 4 * k_max + 1;
    if series.len() < needed {
        return Err(Error::TooFewFrames { needed, got: series.len() });
    }
    let h0 = match series.uniform_step() {
        Some(h) => h,
        None if series.len() == 1 => 1.0,
        None => return Err(Error::InvalidParameter("potential series must be uniformly sampled".into())),
    };
    let grid = *series.frames()[0].grid();
    let frames = series.frames();
    taylor_from_sampler(&grid, k_max, 4.0 * h0, |t| {
        let j = (t / h0).round() as usize;
        Ok(frames[j].clone())
    })
}

/// Max norm of the face gradient, including the seam on periodic grids
/// and excluding the one-sided wall faces otherwise.
fn gradient_norm(d: &ScalarField) -> f64 {
    let g = face_gradient(d.grid(), d.values());
    let n = g.len() - 1;
    let range = if d.grid().bc().is_periodic() { &g[..] } else { &g[1..n] };
    range.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Smallest `k` with `‖∇d⁽ᵏ⁾‖_∞ > tol`; `None` means diffusion equivalent
/// through order `k_max` (and at most [`MAX_ORDER`]).
pub fn smallest_l(pd: &PotentialDifference, tol: f64) -> Option<usize> {
    pd.taylor.iter().take(MAX_ORDER + 1).position(|d| gradient_norm(d) > tol)
}

/// `tol = REL_TOL · scale` with `scale` the largest coefficient gradient,
/// floored so that identically vanishing differences give `None`.
pub fn default_tolerance(pd: &PotentialDifference) -> f64 {
    let scale = pd.taylor.iter().map(gradient_norm).fold(0.0, f64::max);
    (REL_TOL * scale).max(1e-12)
}

/// How the wall faces of `ρ₀ ∇d` are evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WallRule {
    /// The boundary condition fixes the wall-current difference at zero.
    Zero,
    /// Wall faces are the seam face.
    Periodic,
    /// Second-order extrapolation of `ρ₀` and one-sided `∂d` to the walls.
    Extrapolate,
    /// Wall values of `ρ₀ ∂_x d` fixed by the two runs' wall currents.
    Given { left: f64, right: f64 },
}

impl WallRule {
    pub fn for_boundary(bc: &BoundaryKind) -> Self {
        match bc {
            BoundaryKind::NoFlux => WallRule::Zero,
            BoundaryKind::Periodic => WallRule::Periodic,
            BoundaryKind::PrescribedNormalFlux { .. } => WallRule::Extrapolate,
        }
    }
}

/// Face values of `ρ̄ ∇d` (logarithmic-mean `ρ̄` on interior faces).
pub fn weighted_gradient(rho0: &ScalarField, d: &ScalarField, rule: WallRule) -> Result<Vec<f64>> {
    d.check_grid(rho0.grid())?;
    let grid = rho0.grid();
    let n = grid.n_cells();
    let r = rho0.values();
    let grad = face_gradient(grid, d.values());
    let mut g = vec![0.0; n + 1];
    for f in 1..n {
        g[f] = log_mean(r[f - 1], r[f]) * grad[f];
    }
    match rule {
        WallRule::Zero => {}
        WallRule::Periodic => {
            let w = log_mean(r[n - 1], r[0]) * grad[0];
            g[0] = w;
            g[n] = w;
        }
        WallRule::Extrapolate => {
            let (rl, rr) = boundary_values(r);
            g[0] = rl.max(0.0) * grad[0];
            g[n] = rr.max(0.0) * grad[n];
        }
        WallRule::Given { left, right } => {
            g[0] = left;
            g[n] = right;
        }
    }
    Ok(g)
}

/// `Σ_walls ρ₀ d ∂_ν d` with outward normal `ν`: the one-dimensional
/// surface integral whose vanishing makes the leading density difference
/// nonzero.
///
/// Under no-flux walls `ρ₀ ∂_ν d` is the wall-current difference, which the
/// boundary condition sets to zero, so the criterion is exactly 0; periodic
/// end points cancel. Otherwise wall values are extrapolated to second order.
pub fn surface_criterion(rho0: &ScalarField, dvl: &ScalarField) -> Result<f64> {
    dvl.check_grid(rho0.grid())?;
    let grid = rho0.grid();
    match WallRule::for_boundary(&grid.bc()) {
        WallRule::Zero | WallRule::Periodic => Ok(0.0),
        _ => {
            let g = weighted_gradient(rho0, dvl, WallRule::Extrapolate)?;
            let (dl, dr) = boundary_values(dvl.values());
            Ok(dr * g[grid.n_cells()] - dl * g[0])
        }
    }
}

/// Terms of the discrete integration-by-parts identity
/// `Σ d_i (g_{i+1/2} - g_{i-1/2}) = -Σ_faces ρ̄ (∇d)² dx + boundary`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyIdentity {
    pub lhs: f64,
    pub volume: f64,
    pub boundary: f64,
}

impl EnergyIdentity {
    pub fn imbalance(&self) -> f64 {
        (self.lhs - self.volume - self.boundary).abs()
    }
}

pub fn energy_identity(rho0: &ScalarField, dvl: &ScalarField) -> Result<EnergyIdentity> {
    let grid = rho0.grid();
    let n = grid.n_cells();
    let dx = grid.dx();
    let rule = WallRule::for_boundary(&grid.bc());
    let g = weighted_gradient(rho0, dvl, rule)?;
    let d = dvl.values();
    let grad = face_gradient(grid, d);
    let lhs: f64 = (0..n).map(|i| d[i] * (g[i + 1] - g[i])).sum();
    let mut volume: f64 = -(1..n).map(|f| g[f] * grad[f]).sum::<f64>() * dx;
    let boundary = if rule == WallRule::Periodic {
        volume -= g[0] * grad[0] * dx;
        0.0
    } else {
        d[n - 1] * g[n] - d[0] * g[0]
    };
    Ok(EnergyIdentity { lhs, volume, boundary })
}

/// `Dβ ∇·(ρ̄ ∇d)` at the cells.
pub fn lemma_rhs(rho0: &ScalarField, dvl: &ScalarField, rule: WallRule, d_beta: f64) -> Result<ScalarField> {
    let g = weighted_gradient(rho0, dvl, rule)?;
    let div = face_divergence(rho0.grid(), &g);
    ScalarField::new(*rho0.grid(), Quantity::Generic, div.into_iter().map(|v| d_beta * v).collect())
}

/// Densities and currents of the `V` and `V'` runs at common frame times.
#[derive(Debug, Clone)]
pub struct PairedFrames {
    pub rho: Vec<ScalarField>,
    pub rho_primed: Vec<ScalarField>,
    pub j: Vec<VectorField>,
    pub j_primed: Vec<VectorField>,
}

/// Two solver runs from the same initial state under `V` and `V'`.
pub trait PairedDynamics {
    fn grid(&self) -> Grid1D;
    fn d_beta(&self) -> f64;
    /// Wall treatment for the order-`order` coefficient.
    fn wall_rule(&self, order: usize) -> WallRule;
    /// One-body frames at `t = k h`, `k = 0..=count`.
    fn frames(&self, h: f64, count: usize) -> Result<PairedFrames>;
}

/// `k`-th time derivative at 0 of the wall currents (zero for no-flux walls).
fn wall_current_derivative(bc: &BoundaryKind, k: usize) -> (f64, f64) {
    match bc {
        BoundaryKind::PrescribedNormalFlux { left, right } => (left.derivative(0.0, k), right.derivative(0.0, k)),
        _ => (0.0, 0.0),
    }
}

/// Since `∂_t^l(j - j') = -Dβ ρ₀ ∂_x d⁽ˡ⁾`, the walls carry
/// `ρ₀ ∂_x d⁽ˡ⁾ = -∂_t^l(j_wall - j'_wall) / Dβ`.
fn pair_wall_rule(a: &BoundaryKind, b: &BoundaryKind, order: usize, d_beta: f64) -> WallRule {
    match (a.is_periodic(), b.is_periodic()) {
        (true, true) => WallRule::Periodic,
        (false, false) => {
            let (al, ar) = wall_current_derivative(a, order);
            let (bl, br) = wall_current_derivative(b, order);
            if al == bl && ar == br {
                WallRule::Zero
            } else {
                WallRule::Given { left: -(al - bl) / d_beta, right: -(ar - br) / d_beta }
            }
        }
        _ => WallRule::Extrapolate,
    }
}

/// One-body runs; each frame interval is split into `substeps` solver steps.
#[derive(Debug, Clone)]
pub struct Fpe1Pair {
    pub base: Fpe1Model,
    pub primed: Fpe1Model,
    pub rho0: ScalarField,
    pub substeps: usize,
}

impl PairedDynamics for Fpe1Pair {
    fn grid(&self) -> Grid1D {
        self.base.grid
    }
    fn d_beta(&self) -> f64 {
        self.base.diffusion * self.base.beta
    }
    fn wall_rule(&self, order: usize) -> WallRule {
        pair_wall_rule(&self.base.grid.bc(), &self.primed.grid.bc(), order, self.d_beta())
    }
    fn frames(&self, h: f64, count: usize) -> Result<PairedFrames> {
        let t_end = h * count as f64;
        let dt = h / self.substeps as f64;
        let a = self.base.run(&self.rho0, dt, t_end, self.substeps)?;
        let b = self.primed.run(&self.rho0, dt, t_end, self.substeps)?;
        Ok(PairedFrames {
            rho: a.densities.frames().to_vec(),
            rho_primed: b.densities.frames().to_vec(),
            j: a.currents.frames().to_vec(),
            j_primed: b.currents.frames().to_vec(),
        })
    }
}

/// N-body runs reduced to one-body density and current.
#[derive(Debug, Clone)]
pub struct NBodyPair {
    pub base: NBodyModel,
    pub primed: NBodyModel,
    pub p0: NBodyDensity,
    pub substeps: usize,
}

impl PairedDynamics for NBodyPair {
    fn grid(&self) -> Grid1D {
        self.base.grid
    }
    fn d_beta(&self) -> f64 {
        self.base.diffusion * self.base.beta
    }
    fn wall_rule(&self, order: usize) -> WallRule {
        pair_wall_rule(&self.base.grid.bc(), &self.primed.grid.bc(), order, self.d_beta())
    }
    fn frames(&self, h: f64, count: usize) -> Result<PairedFrames> {
        let t_end = h * count as f64;
        let dt = h / self.substeps as f64;
        let one = |m: &NBodyModel| -> Result<(Vec<ScalarField>, Vec<VectorField>)> {
            let run = m.run(&self.p0, dt, t_end, self.substeps)?;
            let mut rho = Vec::new();
            let mut j = Vec::new();
            for (t, p) in run.densities.iter() {
                rho.push(reduce(p, 1)?.to_scalar_field()?);
                j.push(m.current(p, t)?.one_body());
            }
            Ok((rho, j))
        };
        let (rho, j) = one(&self.base)?;
        let (rho_primed, j_primed) = one(&self.primed)?;
        Ok(PairedFrames { rho, rho_primed, j, j_primed })
    }
}

/// Leading-order comparison of a measured derivative with its prediction.
#[derive(Debug, Clone)]
pub struct OrderCheck {
    pub order: usize,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    /// `‖lhs - rhs‖_∞ / ‖rhs‖_∞`
    pub relative_error: f64,
}

fn relative(lhs: &[f64], rhs: &[f64]) -> f64 {
    let diff = lhs.iter().zip(rhs).fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()));
    let scale = rhs.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

fn frame_derivatives(
    pair: &impl PairedDynamics,
    h: f64,
    orders: &[usize],
) -> Result<(ScalarField, Vec<(Vec<f64>, Vec<f64>)>)> {
    let kmax = orders.iter().copied().max().unwrap_or(0);
    let mut runs = Vec::with_capacity(3);
    for s in 0..3 {
        runs.push(pair.frames(h / f64::from(1u32 << s), kmax.max(1))?);
    }
    let rho0 = runs[0].rho[0].clone();
    let diff = |f: &PairedFrames, k: usize| -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let rho = (0..=k).map(|m| f.rho[m].sub(&f.rho_primed[m]).map(|x| x.into_values())).collect::<Result<_>>();
        let j = (0..=k).map(|m| f.j[m].sub(&f.j_primed[m]).map(|x| x.into_values())).collect::<Result<_>>();
        (rho.unwrap_or_default(), j.unwrap_or_default())
    };
    let mut out = Vec::new();
    for &k in orders {
        let rho_k = derivative_at_zero(k, h, |s| Ok(diff(&runs[s], k).0))?;
        let j_k = derivative_at_zero(k, h, |s| Ok(diff(&runs[s], k).1))?;
        out.push((rho_k, j_k));
    }
    Ok((rho0, out))
}

/// `∂_t^{l+1}(ρ - ρ')|₀` from the paired runs (frame steps `h, h/2, h/4`)
/// against `Dβ ∇·(ρ₀ ∇d⁽ˡ⁾)`.
pub fn lemma_check(pair: &impl PairedDynamics, pd: &PotentialDifference, l: Option<usize>, h: f64) -> Result<OrderCheck> {
    let l = l.ok_or(Error::NoOrder)?;
    let dl = pd.taylor.get(l).ok_or(Error::OrderTooHigh { k_max: l, max: pd.k_max })?;
    let (rho0, derivs) = frame_derivatives(pair, h, &[l + 1])?;
    let rhs = lemma_rhs(&rho0, dl, pair.wall_rule(l), pair.d_beta())?.into_values();
    let scale = rhs.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    if scale <= 1e-12 {
        return Err(Error::Degenerate("leading density difference vanishes identically".into()));
    }
    let lhs = derivs.into_iter().next().map(|d| d.0).unwrap_or_default();
    let relative_error = relative(&lhs, &rhs);
    Ok(OrderCheck { order: l + 1, lhs, rhs, relative_error })
}

/// Max norms of `∂_t^k(ρ - ρ')|₀` for `k = 1..=l` (all vanish below order `l + 1`).
pub fn lower_order_density_differences(pair: &impl PairedDynamics, l: usize, h: f64) -> Result<Vec<f64>> {
    if l == 0 {
        return Ok(Vec::new());
    }
    let orders: Vec<usize> = (1..=l).collect();
    let (_, derivs) = frame_derivatives(pair, h, &orders)?;
    Ok(derivs.iter().map(|(r, _)| r.iter().fold(0.0, |m: f64, v| m.max(v.abs()))).collect())
}

/// `∂_t^l(j - j')|₀` against `-Dβ ρ̄₀ ∇d⁽ˡ⁾` on the faces.
pub fn current_uniqueness_check(
    pair: &impl PairedDynamics,
    pd: &PotentialDifference,
    l: Option<usize>,
    h: f64,
) -> Result<OrderCheck> {
    let l = l.ok_or(Error::NoOrder)?;
    let dl = pd.taylor.get(l).ok_or(Error::OrderTooHigh { k_max: l, max: pd.k_max })?;
    let (rho0, derivs) = frame_derivatives(pair, h, &[l])?;
    let rhs: Vec<f64> =
        weighted_gradient(&rho0, dl, pair.wall_rule(l))?.into_iter().map(|g| -pair.d_beta() * g).collect();
    let lhs = derivs.into_iter().next().map(|d| d.1).unwrap_or_default();
    let relative_error = relative(&lhs, &rhs);
    Ok(OrderCheck { order: l, lhs, rhs, relative_error })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    UniqueWithinTolerance,
    LoopholeDetected,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::UniqueWithinTolerance => "unique-within-tolerance",
            Verdict::LoopholeDetected => "loophole-detected",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone)]
pub struct UniquenessReport {
    pub l: Option<usize>,
    pub tolerance: f64,
    pub surface_value: f64,
    /// Predicted leading density difference `Dβ ∇·(ρ₀ ∇d⁽ˡ⁾)`.
    pub lemma_rhs: Option<ScalarField>,
    pub energy: Option<EnergyIdentity>,
    pub verdict: Verdict,
}

/// Static part of the analysis (no solver runs): order, surface criterion,
/// energy identity and predicted leading density difference.
pub fn uniqueness_report(rho0: &ScalarField, pd: &PotentialDifference, rule: WallRule, d_beta: f64) -> Result<UniquenessReport> {
    let tolerance = default_tolerance(pd);
    let l = smallest_l(pd, tolerance);
    let Some(order) = l else {
        let differs = pd.probe_gradient.is_some_and(|g| g > tolerance);
        let verdict = if differs { Verdict::Inconclusive } else { Verdict::UniqueWithinTolerance };
        return Ok(UniquenessReport { l, tolerance, surface_value: 0.0, lemma_rhs: None, energy: None, verdict });
    };
    let dl = &pd.taylor[order];
    let surface_value = surface_criterion(rho0, dl)?;
    let energy = energy_identity(rho0, dl)?;
    let rhs = lemma_rhs(rho0, dl, rule, d_beta)?;
    // each quantity is compared with the size of the terms it is built from
    let flux_scale = max_abs(&weighted_gradient(rho0, dl, rule)?);
    let surface_zero = surface_value.abs() <= REL_TOL * dl.max_norm() * flux_scale;
    let rhs_zero = rhs.max_norm() <= REL_TOL * d_beta * flux_scale / rho0.grid().dx();
    let verdict = match (surface_zero, rhs_zero) {
        (_, false) => Verdict::UniqueWithinTolerance,
        (false, true) => Verdict::LoopholeDetected,
        (true, true) => Verdict::Inconclusive,
    };
    Ok(UniquenessReport { l, tolerance, surface_value, lemma_rhs: Some(rhs), energy: Some(energy), verdict })
}
