//! External one-body forces `K₁ = -∇V + R`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{face_gradient, Grid1D, Quantity, ScalarField, TimeSeries};

/// Spatial shape of a potential term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SpaceProfile {
    /// 1
    Constant,
    /// x
    Linear,
    /// x²
    Quadratic,
    /// tan²(x)
    Tan2,
    /// ln(1 + x²)
    LogCauchy,
    /// sin(x)
    Sin,
    /// cos(x)
    Cos,
    /// Values at the cell centers of the grid the drive is used on.
    Sampled { values: Vec<f64> },
}

impl SpaceProfile {
    fn value(&self, x: f64, grid: Option<&Grid1D>) -> f64 {
        match self {
            SpaceProfile::Constant => 1.0,
            SpaceProfile::Linear => x,
            SpaceProfile::Quadratic => x * x,
            SpaceProfile::Tan2 => x.tan().powi(2),
            SpaceProfile::LogCauchy => (1.0 + x * x).ln(),
            SpaceProfile::Sin => x.sin(),
            SpaceProfile::Cos => x.cos(),
            SpaceProfile::Sampled { values } => grid.map_or(0.0, |g| interpolate_cells(g, values, x)),
        }
    }

    fn derivative(&self, x: f64, grid: Option<&Grid1D>) -> f64 {
        match self {
            SpaceProfile::Constant => 0.0,
            SpaceProfile::Linear => 1.0,
            SpaceProfile::Quadratic => 2.0 * x,
            SpaceProfile::Tan2 => {
                let t = x.tan();
                2.0 * t * (1.0 + t * t)
            }
            SpaceProfile::LogCauchy => 2.0 * x / (1.0 + x * x),
            SpaceProfile::Sin => x.cos(),
            SpaceProfile::Cos => -x.sin(),
            SpaceProfile::Sampled { values } => grid.map_or(0.0, |g| interpolate_cell_slope(g, values, x)),
        }
    }
}

/// Time factor of a potential term.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TimeProfile {
    #[default]
    Constant,
    /// t^power
    Power { power: u32 },
    /// 1 - exp(-t/tau)
    Ramp { tau: f64 },
}

impl TimeProfile {
    pub fn value(&self, t: f64) -> f64 {
        self.derivative(t, 0)
    }

    /// Exact `k`-th time derivative.
    pub fn derivative(&self, t: f64, k: usize) -> f64 {
        match *self {
            TimeProfile::Constant => (k == 0) as u8 as f64,
            TimeProfile::Power { power } => {
                let p = power as usize;
                if k > p {
                    0.0
                } else {
                    let falling: f64 = ((p - k + 1)..=p).map(|m| m as f64).product();
                    falling * t.powi((p - k) as i32)
                }
            }
            TimeProfile::Ramp { tau } => {
                let e = (-t / tau).exp();
                if k == 0 {
                    1.0 - e
                } else {
                    -(-1.0 / tau).powi(k as i32) * e
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialTerm {
    pub amplitude: f64,
    pub space: SpaceProfile,
    #[serde(default)]
    pub time: TimeProfile,
}

impl PotentialTerm {
    pub fn new(amplitude: f64, space: SpaceProfile, time: TimeProfile) -> Self {
        Self { amplitude, space, time }
    }
    pub fn stationary(amplitude: f64, space: SpaceProfile) -> Self {
        Self::new(amplitude, space, TimeProfile::Constant)
    }
}

/// Sum of separable terms `a · s(x) · τ(t)`; time derivatives are exact.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Potential {
    pub terms: Vec<PotentialTerm>,
}

impl Potential {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn single(amplitude: f64, space: SpaceProfile, time: TimeProfile) -> Self {
        Self { terms: vec![PotentialTerm::new(amplitude, space, time)] }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.amplitude == 0.0)
    }

    pub fn plus(&self, other: &Potential) -> Potential {
        Potential { terms: self.terms.iter().chain(&other.terms).cloned().collect() }
    }

    pub fn negated(&self) -> Potential {
        Potential {
            terms: self.terms.iter().map(|t| PotentialTerm { amplitude: -t.amplitude, ..t.clone() }).collect(),
        }
    }

    pub fn value(&self, x: f64, t: f64, grid: Option<&Grid1D>) -> f64 {
        self.terms.iter().map(|term| term.amplitude * term.space.value(x, grid) * term.time.value(t)).sum()
    }

    pub fn slope(&self, x: f64, t: f64, grid: Option<&Grid1D>) -> f64 {
        self.terms.iter().map(|term| term.amplitude * term.space.derivative(x, grid) * term.time.value(t)).sum()
    }

    /// `∂_t^k V(x, t)` sampled at the cell centers.
    pub fn sample_time_derivative(&self, grid: &Grid1D, t: f64, k: usize) -> Result<ScalarField> {
        let n = grid.n_cells();
        let mut out = vec![0.0; n];
        for term in &self.terms {
            let w = term.amplitude * term.time.derivative(t, k);
            if w == 0.0 {
                continue;
            }
            match &term.space {
                SpaceProfile::Sampled { values } => {
                    if values.len() != n {
                        return Err(Error::InvalidParameter(format!(
                            "sampled potential has {} values for a {n}-cell grid",
                            values.len()
                        )));
                    }
                    out.iter_mut().zip(values).for_each(|(o, v)| *o += w * v);
                }
                s => out.iter_mut().enumerate().for_each(|(i, o)| *o += w * s.value(grid.cell_center(i), None)),
            }
        }
        ScalarField::new(*grid, Quantity::Potential, out)
    }

    pub fn sample(&self, grid: &Grid1D, t: f64) -> Result<ScalarField> {
        self.sample_time_derivative(grid, t, 0)
    }
}

/// A face-sampled force (not necessarily a gradient), scaled by a time profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceForce {
    pub values: Vec<f64>,
    #[serde(default)]
    pub time: TimeProfile,
}

/// External one-body drive: potential `V`, a spatially constant
/// non-conservative force `R(t)` (the only divergence-free field in 1D),
/// optional face-sampled forces and an optional time-sampled potential.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExternalDrive {
    pub potential: Potential,
    pub drift: f64,
    pub drift_time: TimeProfile,
    pub face_forces: Vec<FaceForce>,
    pub sampled: Option<TimeSeries<ScalarField>>,
}

impl ExternalDrive {
    pub fn from_potential(potential: Potential) -> Self {
        Self { potential, ..Default::default() }
    }

    pub fn with_drift(mut self, r: f64) -> Self {
        self.drift = r;
        self
    }

    pub fn with_face_force(mut self, force: FaceForce) -> Self {
        self.face_forces.push(force);
        self
    }

    pub fn with_sampled(mut self, series: TimeSeries<ScalarField>) -> Self {
        self.sampled = Some(series);
        self
    }

    pub fn drift_at(&self, t: f64) -> f64 {
        self.drift * self.drift_time.value(t)
    }

    /// True when the drive has no time dependence.
    pub fn is_static(&self) -> bool {
        self.potential.terms.iter().all(|t| t.time == TimeProfile::Constant)
            && self.drift_time == TimeProfile::Constant
            && self.face_forces.iter().all(|f| f.time == TimeProfile::Constant)
            && self.sampled.as_ref().is_none_or(|s| s.len() <= 1)
    }

    /// Potential at the cell centers, including the time-sampled part.
    pub fn potential_at(&self, grid: &Grid1D, t: f64) -> Result<Vec<f64>> {
        let mut v = self.potential.sample(grid, t)?.into_values();
        if let Some(series) = &self.sampled {
            let s = interpolate_series(series, t);
            if s.len() != v.len() {
                return Err(Error::GridMismatch);
            }
            v.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        }
        Ok(v)
    }

    /// Total external force on the faces: `-ΔV/dx + R + face forces`.
    ///
    /// `∇V` is always the face difference of the sampled potential, so
    /// analytic and sampled drives share one code path.
    pub fn face_force(&self, grid: &Grid1D, t: f64) -> Result<Vec<f64>> {
        let v = self.potential_at(grid, t)?;
        let mut f = face_gradient(grid, &v);
        let r = self.drift_at(t);
        f.iter_mut().for_each(|x| *x = -*x + r);
        for ff in &self.face_forces {
            if ff.values.len() != grid.n_faces() {
                return Err(Error::GridMismatch);
            }
            let w = ff.time.value(t);
            f.iter_mut().zip(&ff.values).for_each(|(a, b)| *a += w * b);
        }
        Ok(f)
    }

    /// Force at an arbitrary position, for particle samplers.
    pub fn force_at(&self, grid: &Grid1D, x: f64, t: f64) -> f64 {
        let mut force = -self.potential.slope(x, t, Some(grid)) + self.drift_at(t);
        if let Some(series) = &self.sampled {
            force -= interpolate_cell_slope(grid, &interpolate_series(series, t), x);
        }
        for ff in &self.face_forces {
            force += ff.time.value(t) * interpolate_faces(grid, &ff.values, x);
        }
        force
    }

    /// Largest face force magnitude at time `t`.
    pub fn max_force(&self, grid: &Grid1D, t: f64) -> Result<f64> {
        Ok(self.face_force(grid, t)?.iter().fold(0.0, |m: f64, v| m.max(v.abs())))
    }
}

fn interpolate_series(series: &TimeSeries<ScalarField>, t: f64) -> Vec<f64> {
    let times = series.times();
    let frames = series.frames();
    if times.len() == 1 || t <= times[0] {
        return frames[0].values().to_vec();
    }
    let k = times.partition_point(|&s| s <= t);
    if k >= times.len() {
        return frames[times.len() - 1].values().to_vec();
    }
    let (t0, t1) = (times[k - 1], times[k]);
    let w = (t - t0) / (t1 - t0);
    frames[k - 1].values().iter().zip(frames[k].values()).map(|(a, b)| (1.0 - w) * a + w * b).collect()
}

/// Piecewise linear interpolation of cell-centered values (clamped).
pub(crate) fn interpolate_cells(grid: &Grid1D, values: &[f64], x: f64) -> f64 {
    let n = values.len();
    let s = (x - grid.x_min()) / grid.dx() - 0.5;
    if s <= 0.0 {
        return values[0];
    }
    if s >= (n - 1) as f64 {
        return values[n - 1];
    }
    let i = s.floor() as usize;
    let w = s - i as f64;
    (1.0 - w) * values[i] + w * values[i + 1]
}

fn interpolate_cell_slope(grid: &Grid1D, values: &[f64], x: f64) -> f64 {
    let n = values.len();
    let s = ((x - grid.x_min()) / grid.dx() - 0.5).clamp(0.0, (n - 1) as f64 - 1e-12);
    let i = s.floor() as usize;
    (values[i + 1] - values[i]) / grid.dx()
}

/// Piecewise linear interpolation of face values.
pub(crate) fn interpolate_faces(grid: &Grid1D, values: &[f64], x: f64) -> f64 {
    let n = values.len() - 1;
    let s = ((x - grid.x_min()) / grid.dx()).clamp(0.0, n as f64);
    let i = (s.floor() as usize).min(n - 1);
    let w = s - i as f64;
    (1.0 - w) * values[i] + w * values[i + 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::BoundaryKind;

    #[test]
    fn time_profile_derivatives() {
        let p = TimeProfile::Power { power: 2 };
        assert_eq!(p.derivative(3.0, 0), 9.0);
        assert_eq!(p.derivative(3.0, 1), 6.0);
        assert_eq!(p.derivative(3.0, 2), 2.0);
        assert_eq!(p.derivative(3.0, 3), 0.0);
        let r = TimeProfile::Ramp { tau: 0.5 };
        assert_eq!(r.value(0.0), 0.0);
        // d/dt (1 - e^{-t/τ}) = e^{-t/τ}/τ
        assert!((r.derivative(0.0, 1) - 2.0).abs() < 1e-15);
        assert!((r.derivative(0.0, 2) + 4.0).abs() < 1e-15);
        assert_eq!(TimeProfile::Constant.derivative(1.0, 1), 0.0);
    }

    #[test]
    fn face_force_of_harmonic_potential() {
        let g = Grid1D::new(-1.0, 1.0, 20, BoundaryKind::NoFlux).unwrap();
        let d = ExternalDrive::from_potential(Potential::single(1.0, SpaceProfile::Quadratic, TimeProfile::Constant))
            .with_drift(0.25);
        let f = d.face_force(&g, 0.0).unwrap();
        for (k, x) in g.faces().iter().enumerate() {
            // difference quotient of x² is exact at the face midpoint
            assert!((f[k] - (-2.0 * x + 0.25)).abs() < 1e-12, "{k}");
        }
        assert!((d.force_at(&g, 0.3, 0.0) - (-0.6 + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn sampled_profile_must_match_grid() {
        let g = Grid1D::new(0.0, 1.0, 8, BoundaryKind::NoFlux).unwrap();
        let p = Potential::single(1.0, SpaceProfile::Sampled { values: vec![0.0; 7] }, TimeProfile::Constant);
        assert!(p.sample(&g, 0.0).is_err());
    }
}
