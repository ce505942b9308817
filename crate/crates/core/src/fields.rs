//! Uniform cell-centered grids, sampled fields and the discrete calculus
//! shared by every solver.
//!
//! Scalars live at the `n` cell centers `x_i = x_min + (i + 1/2) dx`,
//! vector quantities (currents, forces) on the `n + 1` faces
//! `x_{i-1/2} = x_min + i dx`. With this staggering the divergence of any
//! face field telescopes, so the discrete divergence theorem holds exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time profile of a prescribed boundary current.
///
/// `value(t) = amplitude` or, with a ramp, `amplitude * (1 - exp(-t / tau))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxSchedule {
    pub amplitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp_tau: Option<f64>,
}

impl FluxSchedule {
    pub fn constant(amplitude: f64) -> Self {
        Self { amplitude, ramp_tau: None }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.derivative(t, 0)
    }

    /// Exact `k`-th time derivative.
    pub fn derivative(&self, t: f64, k: usize) -> f64 {
        match (self.ramp_tau, k) {
            (Some(tau), 0) => self.amplitude * (1.0 - (-t / tau).exp()),
            (Some(tau), _) => -self.amplitude * (-1.0 / tau).powi(k as i32) * (-t / tau).exp(),
            (None, 0) => self.amplitude,
            (None, _) => 0.0,
        }
    }
}

/// Boundary condition of the domain.
///
/// `PrescribedNormalFlux` stores the current `j` (positive = towards +x) on
/// the left and right boundary faces, so an inflow at the left wall is a
/// positive `left` value.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BoundaryKind {
    #[default]
    NoFlux,
    Periodic,
    PrescribedNormalFlux { left: FluxSchedule, right: FluxSchedule },
}

impl BoundaryKind {
    pub fn is_periodic(&self) -> bool {
        matches!(self, BoundaryKind::Periodic)
    }

    /// Prescribed wall currents at time `t`, if any.
    pub fn wall_currents(&self, t: f64) -> Option<(f64, f64)> {
        match self {
            BoundaryKind::PrescribedNormalFlux { left, right } => Some((left.value(t), right.value(t))),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    x_min: f64,
    x_max: f64,
    n_cells: usize,
    bc: BoundaryKind,
}

impl Grid1D {
    pub const MIN_CELLS: usize = 4;

    pub fn new(x_min: f64, x_max: f64, n_cells: usize, bc: BoundaryKind) -> Result<Self> {
        if n_cells < Self::MIN_CELLS {
            return Err(Error::InvalidGrid(format!("need at least {} cells, got {n_cells}", Self::MIN_CELLS)));
        }
        if !(x_min.is_finite() && x_max.is_finite()) || x_max <= x_min {
            return Err(Error::InvalidGrid(format!("bad interval [{x_min}, {x_max}]")));
        }
        if let BoundaryKind::PrescribedNormalFlux { left, right } = bc {
            for s in [left, right] {
                if !s.amplitude.is_finite() || s.ramp_tau.is_some_and(|tau| !(tau.is_finite() && tau > 0.0)) {
                    return Err(Error::InvalidGrid("prescribed boundary flux must be finite".into()));
                }
            }
        }
        Ok(Self { x_min, x_max, n_cells, bc })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }
    pub fn n_faces(&self) -> usize {
        self.n_cells + 1
    }
    pub fn bc(&self) -> BoundaryKind {
        self.bc
    }
    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }
    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_cells as f64
    }

    /// Same mesh, different boundary condition.
    pub fn with_bc(&self, bc: BoundaryKind) -> Self {
        Self { bc, ..*self }
    }

    pub fn cell_center(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.dx()
    }
    pub fn face(&self, f: usize) -> f64 {
        self.x_min + f as f64 * self.dx()
    }
    pub fn cell_centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|i| self.cell_center(i)).collect()
    }
    pub fn faces(&self) -> Vec<f64> {
        (0..=self.n_cells).map(|f| self.face(f)).collect()
    }

    /// Cell containing `x`, clamped to the domain.
    pub fn cell_of(&self, x: f64) -> usize {
        let i = ((x - self.x_min) / self.dx()).floor();
        (i.max(0.0) as usize).min(self.n_cells - 1)
    }

    /// Same mesh geometry (boundary condition ignored).
    pub fn same_mesh(&self, other: &Grid1D) -> bool {
        self.n_cells == other.n_cells && self.x_min == other.x_min && self.x_max == other.x_max
    }
}

/// What a sampled field represents; densities carry the extra `>= 0` invariant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quantity {
    Density,
    Potential,
    Current,
    Force,
    #[default]
    Generic,
}

/// Values at the cell centers of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid1D,
    quantity: Quantity,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid1D, quantity: Quantity, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::InvalidParameter(format!(
                "scalar field needs {} values, got {}",
                grid.n_cells(),
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if quantity == Quantity::Density {
            if let Some(index) = values.iter().position(|&v| v < 0.0) {
                return Err(Error::NegativeDensity { index, value: values[index] });
            }
        }
        Ok(Self { grid, quantity, values })
    }

    pub fn from_fn(grid: Grid1D, quantity: Quantity, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, quantity, grid.cell_centers().into_iter().map(f).collect())
    }

    pub fn constant(grid: Grid1D, quantity: Quantity, value: f64) -> Result<Self> {
        Self::new(grid, quantity, vec![value; grid.n_cells()])
    }

    /// Crate-internal constructor for values produced by checked arithmetic.
    pub(crate) fn raw(grid: Grid1D, quantity: Quantity, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_cells());
        Self { grid, quantity, values }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }
    pub fn quantity(&self) -> Quantity {
        self.quantity
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max_norm(&self) -> f64 {
        max_abs(&self.values)
    }

    /// `∫ |self - other| dx` over the grid.
    pub fn l1_distance(&self, other: &ScalarField) -> Result<f64> {
        self.check_grid(other.grid())?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>() * self.grid.dx())
    }

    pub fn max_distance(&self, other: &ScalarField) -> Result<f64> {
        self.check_grid(other.grid())?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    pub fn map(&self, quantity: Quantity, f: impl Fn(f64) -> f64) -> Result<ScalarField> {
        ScalarField::new(self.grid, quantity, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scaled(&self, factor: f64) -> ScalarField {
        Self::raw(self.grid, self.quantity, self.values.iter().map(|v| v * factor).collect())
    }

    /// Pointwise difference, tagged [`Quantity::Generic`].
    pub fn sub(&self, other: &ScalarField) -> Result<ScalarField> {
        self.check_grid(other.grid())?;
        Ok(Self::raw(
            self.grid,
            Quantity::Generic,
            self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        ))
    }

    pub(crate) fn check_grid(&self, other: &Grid1D) -> Result<()> {
        if self.grid.same_mesh(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// Values on the faces of a grid (staggered).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid1D,
    quantity: Quantity,
    values: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: Grid1D, quantity: Quantity, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_faces() {
            return Err(Error::InvalidParameter(format!(
                "vector field needs {} face values, got {}",
                grid.n_faces(),
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, quantity, values })
    }

    pub(crate) fn raw(grid: Grid1D, quantity: Quantity, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_faces());
        Self { grid, quantity, values }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }
    pub fn quantity(&self) -> Quantity {
        self.quantity
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn max_norm(&self) -> f64 {
        max_abs(&self.values)
    }
    /// Max norm over the interior faces only.
    pub fn interior_max_norm(&self) -> f64 {
        max_abs(&self.values[1..self.grid.n_cells()])
    }

    pub fn sub(&self, other: &VectorField) -> Result<VectorField> {
        if !self.grid.same_mesh(other.grid()) {
            return Err(Error::GridMismatch);
        }
        Ok(Self::raw(
            self.grid,
            Quantity::Generic,
            self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        ))
    }

    /// Average of the two faces bounding each cell.
    pub fn to_cells(&self) -> ScalarField {
        let v = &self.values;
        ScalarField::raw(self.grid, self.quantity, (0..self.grid.n_cells()).map(|i| 0.5 * (v[i] + v[i + 1])).collect())
    }
}

/// Frames of a field at strictly increasing times starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries<F> {
    times: Vec<f64>,
    frames: Vec<F>,
}

impl<F> Default for TimeSeries<F> {
    fn default() -> Self {
        Self { times: Vec::new(), frames: Vec::new() }
    }
}

impl<F> TimeSeries<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_frames(times: Vec<f64>, frames: Vec<F>) -> Result<Self> {
        if times.len() != frames.len() {
            return Err(Error::InvalidParameter("times and frames differ in length".into()));
        }
        let mut series = Self::new();
        for (t, f) in times.into_iter().zip(frames) {
            series.push(t, f)?;
        }
        Ok(series)
    }

    pub fn push(&mut self, t: f64, frame: F) -> Result<()> {
        match self.times.last() {
            None if t != 0.0 => return Err(Error::InvalidParameter(format!("first frame must be at t = 0, got {t}"))),
            Some(&last) if t <= last => {
                return Err(Error::InvalidParameter(format!("times must increase strictly ({t} after {last})")))
            }
            _ => {}
        }
        if !t.is_finite() {
            return Err(Error::InvalidParameter("non-finite time".into()));
        }
        self.times.push(t);
        self.frames.push(frame);
        Ok(())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn frames(&self) -> &[F] {
        &self.frames
    }
    pub fn len(&self) -> usize {
        self.times.len()
    }
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
    pub fn last(&self) -> Option<(f64, &F)> {
        self.frames.last().map(|f| (*self.times.last().unwrap(), f))
    }
    pub fn iter(&self) -> impl Iterator<Item = (f64, &F)> {
        self.times.iter().copied().zip(self.frames.iter())
    }

    /// Common spacing of the frame times, if uniform to relative 1e-9.
    pub fn uniform_step(&self) -> Option<f64> {
        if self.times.len() < 2 {
            return None;
        }
        let h = self.times[1] - self.times[0];
        self.times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs().max(1e-300))
            .then_some(h)
    }

    pub fn map<G>(&self, f: impl Fn(&F) -> G) -> TimeSeries<G> {
        TimeSeries { times: self.times.clone(), frames: self.frames.iter().map(f).collect() }
    }
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Midpoint rule `Σ f_i dx`; exact for cell-wise constants.
pub fn integrate(f: &ScalarField) -> f64 {
    f.values().iter().sum::<f64>() * f.grid().dx()
}

/// Exact-to-high-order cell averages `(1/dx) ∫_cell f` by 5-point
/// Gauss-Legendre quadrature on every cell.
pub fn cell_averages(grid: &Grid1D, f: impl Fn(f64) -> f64) -> Vec<f64> {
    const NODES: [f64; 5] = [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
    const WEIGHTS: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let h = 0.5 * grid.dx();
    (0..grid.n_cells())
        .map(|i| {
            let c = grid.cell_center(i);
            0.5 * NODES.iter().zip(WEIGHTS).map(|(z, w)| w * f(c + h * z)).sum::<f64>()
        })
        .collect()
}

/// Face gradient `(f_{i+1} - f_i) / dx`.
///
/// Interior faces use the centered difference. The two boundary faces use
/// the periodic wrap-around difference on a periodic grid and a second
/// order one-sided stencil otherwise; solvers overwrite boundary faces
/// according to the boundary condition.
pub fn gradient(f: &ScalarField) -> VectorField {
    let grid = *f.grid();
    VectorField::raw(grid, Quantity::Generic, face_gradient(&grid, f.values()))
}

pub(crate) fn face_gradient(grid: &Grid1D, v: &[f64]) -> Vec<f64> {
    let n = grid.n_cells();
    let inv_dx = 1.0 / grid.dx();
    let mut g = vec![0.0; n + 1];
    for f in 1..n {
        g[f] = (v[f] - v[f - 1]) * inv_dx;
    }
    if grid.bc().is_periodic() {
        let w = (v[0] - v[n - 1]) * inv_dx;
        g[0] = w;
        g[n] = w;
    } else {
        g[0] = (-2.0 * v[0] + 3.0 * v[1] - v[2]) * inv_dx;
        g[n] = (2.0 * v[n - 1] - 3.0 * v[n - 2] + v[n - 3]) * inv_dx;
    }
    g
}

/// Cell values whose face differences are `g` (interior faces), pinned to
/// zero at `x0` by linear interpolation between cell centers; beyond the
/// outermost centers the boundary face slope is used.
pub fn anchored_cumsum(grid: &Grid1D, g: &[f64], x0: f64) -> Vec<f64> {
    let n = grid.n_cells();
    let dx = grid.dx();
    let mut d = vec![0.0; n];
    for i in 1..n {
        d[i] = d[i - 1] + g[i] * dx;
    }
    let s = (x0 - grid.cell_center(0)) / dx;
    let anchor = if s <= 0.0 {
        s * dx * g[0]
    } else if s >= (n - 1) as f64 {
        d[n - 1] + (s - (n - 1) as f64) * dx * g[n]
    } else {
        let k = s.floor() as usize;
        d[k] + (s - k as f64) * dx * g[k + 1]
    };
    d.iter_mut().for_each(|v| *v -= anchor);
    d
}

/// Second order extrapolation of cell values to the left and right boundary faces.
pub(crate) fn boundary_values(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    let left = (15.0 * v[0] - 10.0 * v[1] + 3.0 * v[2]) / 8.0;
    let right = (15.0 * v[n - 1] - 10.0 * v[n - 2] + 3.0 * v[n - 3]) / 8.0;
    (left, right)
}

/// Cell divergence `(g_{i+1/2} - g_{i-1/2}) / dx`.
pub fn divergence(g: &VectorField) -> ScalarField {
    let grid = *g.grid();
    ScalarField::raw(grid, Quantity::Generic, face_divergence(&grid, g.values()))
}

pub(crate) fn face_divergence(grid: &Grid1D, g: &[f64]) -> Vec<f64> {
    let inv_dx = 1.0 / grid.dx();
    g.windows(2).map(|w| (w[1] - w[0]) * inv_dx).collect()
}

/// Logarithmic mean `(a - b) / (ln a - ln b)` of two densities.
///
/// This is the face density used by every flux in the crate: with it a
/// Boltzmann profile `exp(-βΦ)` carries exactly zero current across each
/// face, and `c / L(ρ_a, ρ_b)` is the exact face force of a constant-current
/// shift. Non-positive arguments give 0.
pub fn log_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        return 0.0;
    }
    log_mean_with_logs(a, b, a.ln(), b.ln())
}

#[inline]
pub(crate) fn log_mean_with_logs(a: f64, b: f64, la: f64, lb: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        return 0.0;
    }
    let u = b / a - 1.0;
    if u.abs() < 1e-3 {
        // u / ln(1+u) series
        a * (1.0 + u * (0.5 + u * (-1.0 / 12.0 + u * (1.0 / 24.0 - u * 19.0 / 720.0))))
    } else {
        (a - b) / (la - lb)
    }
}

/// Safe natural log of a density (non-positive values map to -inf).
#[inline]
pub(crate) fn density_ln(v: f64) -> f64 {
    if v > 0.0 {
        v.ln()
    } else {
        f64::NEG_INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, bc: BoundaryKind) -> Grid1D {
        Grid1D::new(0.0, 1.0, n, bc).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid1D::new(0.0, 1.0, 3, BoundaryKind::NoFlux).is_err());
        assert!(Grid1D::new(1.0, 1.0, 8, BoundaryKind::NoFlux).is_err());
        assert!(Grid1D::new(0.0, f64::NAN, 8, BoundaryKind::NoFlux).is_err());
        let bad = BoundaryKind::PrescribedNormalFlux {
            left: FluxSchedule::constant(f64::INFINITY),
            right: FluxSchedule::constant(0.0),
        };
        assert!(Grid1D::new(0.0, 1.0, 8, bad).is_err());
        let g = grid(8, BoundaryKind::NoFlux);
        assert_eq!(g.dx(), 0.125);
        assert_eq!(g.cell_center(0), 0.0625);
        assert!(g.cell_centers().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn field_validation() {
        let g = grid(8, BoundaryKind::NoFlux);
        assert!(ScalarField::new(g, Quantity::Density, vec![1.0; 7]).is_err());
        assert!(matches!(
            ScalarField::constant(g, Quantity::Density, -1.0),
            Err(Error::NegativeDensity { .. })
        ));
        assert!(matches!(ScalarField::constant(g, Quantity::Potential, f64::NAN), Err(Error::NonFinite { .. })));
        assert!(ScalarField::constant(g, Quantity::Potential, -1.0).is_ok());
    }

    #[test]
    fn integrate_constants() {
        let g = Grid1D::new(0.0, 1.0, 64, BoundaryKind::NoFlux).unwrap();
        assert!((integrate(&ScalarField::constant(g, Quantity::Generic, 1.0).unwrap()) - 1.0).abs() < 1e-15);
        assert!((integrate(&ScalarField::constant(g, Quantity::Generic, 2.0).unwrap()) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn constant_and_linear_gradients() {
        for bc in [BoundaryKind::NoFlux, BoundaryKind::Periodic] {
            let g = grid(16, bc);
            let c = ScalarField::constant(g, Quantity::Generic, 3.5).unwrap();
            assert!(gradient(&c).max_norm() < 1e-12);
        }
        let g = Grid1D::new(-2.0, 3.0, 32, BoundaryKind::NoFlux).unwrap();
        let lin = ScalarField::from_fn(g, Quantity::Generic, |x| 1.7 * x - 0.3).unwrap();
        let gr = gradient(&lin);
        for v in gr.values() {
            assert!((v - 1.7).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn laplacian_of_sine_is_second_order() {
        let err = |n: usize| {
            let g = Grid1D::new(0.0, 2.0 * std::f64::consts::PI, n, BoundaryKind::Periodic).unwrap();
            let f = ScalarField::from_fn(g, Quantity::Generic, f64::sin).unwrap();
            let lap = divergence(&gradient(&f));
            let exact = ScalarField::from_fn(g, Quantity::Generic, |x| -x.sin()).unwrap();
            lap.max_distance(&exact).unwrap()
        };
        let (e1, e2) = (err(64), err(128));
        // analytic second derivative: error dx²/12 · |sin''''| ≈ 8e-4 at 64 cells
        assert!(e1 < 1e-3);
        assert!((e1 / e2 - 4.0).abs() < 0.1, "ratio {}", e1 / e2);
    }

    #[test]
    fn no_flux_divergence_integrates_to_zero() {
        let g = grid(50, BoundaryKind::NoFlux);
        let mut v: Vec<f64> = (0..51).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        v[0] = 0.0;
        v[50] = 0.0;
        let field = VectorField::new(g, Quantity::Current, v).unwrap();
        assert!(integrate(&divergence(&field)).abs() < 1e-14);
    }

    #[test]
    fn log_mean_properties() {
        assert_eq!(log_mean(0.0, 1.0), 0.0);
        assert!((log_mean(2.0, 2.0) - 2.0).abs() < 1e-15);
        let exact = (3.0 - 1.0) / 3.0f64.ln();
        assert!((log_mean(3.0, 1.0) - exact).abs() < 1e-15);
        // series branch continuous with the closed form
        let a: f64 = 1.0;
        let b: f64 = 1.0 + 9.99e-4;
        let closed = (a - b) / (a.ln() - b.ln());
        assert!((log_mean(a, b) - closed).abs() < 1e-14);
        assert!(log_mean(a, b) <= 0.5 * (a + b) && log_mean(a, b) >= (a * b).sqrt());
    }

    #[test]
    fn time_series_rules() {
        let mut s = TimeSeries::new();
        assert!(s.push(0.1, 1.0).is_err());
        s.push(0.0, 1.0).unwrap();
        s.push(0.5, 2.0).unwrap();
        assert!(s.push(0.5, 3.0).is_err());
        s.push(1.0, 3.0).unwrap();
        assert_eq!(s.uniform_step(), Some(0.5));
        s.push(1.2, 0.0).unwrap();
        assert_eq!(s.uniform_step(), None);
    }
}
