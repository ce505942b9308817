//! Serializable experiment definitions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{cell_averages, BoundaryKind, FluxSchedule, Grid1D, Quantity, ScalarField};
use crate::fpe1::{Fpe1Model, TimeScheme};
use crate::interactions::{Closure, ExternalDrive, PairInteraction, PairKind, Potential, SpaceProfile, TimeProfile};
use crate::nbody::NBodyModel;

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_stride() -> usize {
    100
}
fn default_safety() -> f64 {
    0.9
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Domain {
    pub x_min: f64,
    pub x_max: f64,
    pub n_cells: usize,
}

/// Built-in external potentials plus a general term list and sampled values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DriveSpec {
    #[default]
    Zero,
    /// `a x²`
    Harmonic { a: f64 },
    /// `a tan²(x)`
    Tan2 {
        #[serde(default = "one")]
        a: f64,
    },
    /// `a ln(1 + x²)`
    LogCauchy {
        #[serde(default = "one")]
        a: f64,
    },
    /// `a cos(x)`
    Cos { a: f64 },
    /// Values at the cell centers.
    Sampled { values: Vec<f64> },
    /// Arbitrary sum of separable terms.
    Terms { terms: Potential },
}

impl DriveSpec {
    pub fn potential(&self) -> Potential {
        let stat = |a: f64, s: SpaceProfile| Potential::single(a, s, TimeProfile::Constant);
        match self {
            DriveSpec::Zero => Potential::zero(),
            DriveSpec::Harmonic { a } => stat(*a, SpaceProfile::Quadratic),
            DriveSpec::Tan2 { a } => stat(*a, SpaceProfile::Tan2),
            DriveSpec::LogCauchy { a } => stat(*a, SpaceProfile::LogCauchy),
            DriveSpec::Cos { a } => stat(*a, SpaceProfile::Cos),
            DriveSpec::Sampled { values } => stat(1.0, SpaceProfile::Sampled { values: values.clone() }),
            DriveSpec::Terms { terms } => terms.clone(),
        }
    }
}

/// Initial one-body density. N-body runs start from the product of the
/// normalized profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialSpec {
    /// `amplitude · exp(-βV(x, 0))` sampled at the cell centers.
    Boltzmann {
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// Boltzmann profile of the drive scaled to `mass`.
    EquilibriumOf {
        #[serde(default = "one")]
        mass: f64,
    },
    Gaussian {
        mu: f64,
        sigma: f64,
        #[serde(default = "one")]
        mass: f64,
    },
    Uniform {
        #[serde(default = "one")]
        mass: f64,
    },
    Sampled { values: Vec<f64> },
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::EquilibriumOf { mass: 1.0 }
    }
}

/// Pass/fail thresholds declared with a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct Tolerances {
    pub mass: f64,
    pub negativity: f64,
    /// Loophole density deviation as a multiple of the base discretization error.
    pub deviation_factor: f64,
    pub current_shift: f64,
    pub divergence: f64,
    pub boundary: f64,
    pub residual_ratio: f64,
    pub relative: f64,
    pub continuity: f64,
    pub l1: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            mass: 1e-8,
            negativity: 1e-12,
            deviation_factor: 5.0,
            current_shift: 1e-6,
            divergence: 1e-10,
            boundary: 1e-10,
            residual_ratio: 3.5,
            relative: 1e-3,
            continuity: 1e-6,
            l1: 0.1,
        }
    }
}

/// Loophole parameters: `c(t) = c0` or `c0 (1 - exp(-t/tau))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct LoopholeSettings {
    pub c0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp_tau: Option<f64>,
    #[serde(default)]
    pub x0: f64,
    /// Absolute density floor; defaults to `1e-10 · max ρ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_floor: Option<f64>,
}

impl LoopholeSettings {
    pub fn schedule(&self) -> FluxSchedule {
        FluxSchedule { amplitude: self.c0, ramp_tau: self.ramp_tau }
    }
}

/// Brownian dynamics sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct BdSettings {
    pub replicas: usize,
    pub steps: usize,
    #[serde(default = "one_usize")]
    pub sample_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_bins: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InverseMode {
    #[default]
    Ideal,
    CustomFlow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct InverseSettings {
    #[serde(default)]
    pub mode: InverseMode,
    #[serde(default)]
    pub x0: f64,
    #[serde(default = "half")]
    pub relaxation: f64,
    #[serde(default = "default_iterations")]
    pub max_iter: usize,
}

fn half() -> f64 {
    0.5
}
fn default_iterations() -> usize {
    20
}

impl Default for InverseSettings {
    fn default() -> Self {
        Self { mode: InverseMode::Ideal, x0: 0.0, relaxation: 0.5, max_iter: 20 }
    }
}

/// A complete experiment definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub domain: Domain,
    #[serde(default)]
    pub bc: BoundaryKind,
    #[serde(default = "one_usize")]
    pub n_particles: usize,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default = "one")]
    pub diffusion: f64,
    #[serde(default)]
    pub drive: DriveSpec,
    /// Spatially constant non-conservative force `R`.
    #[serde(default)]
    pub drift: f64,
    #[serde(default)]
    pub interaction: PairKind,
    #[serde(default)]
    pub closure: Closure,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub scheme: TimeScheme,
    /// Requested step; `None` or a value above the stability bound is
    /// replaced by `dt_safety` times the bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "default_safety")]
    pub dt_safety: f64,
    pub t_end: f64,
    #[serde(default = "default_stride")]
    pub frame_stride: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loophole: Option<LoopholeSettings>,
    /// Second drive for uniqueness probes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primed_drive: Option<DriveSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bd: Option<BdSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inverse: Option<InverseSettings>,
}

/// A step size together with the reason it was chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepChoice {
    pub dt: f64,
    pub bound: f64,
    /// True when the requested step was missing or above the bound.
    pub reduced: bool,
}

impl Scenario {
    /// A scenario with defaults for everything but the domain and run length.
    pub fn new(name: impl Into<String>, domain: Domain, t_end: f64) -> Self {
        Self {
            name: name.into(),
            domain,
            bc: BoundaryKind::NoFlux,
            n_particles: 1,
            beta: 1.0,
            diffusion: 1.0,
            drive: DriveSpec::Zero,
            drift: 0.0,
            interaction: PairKind::None,
            closure: Closure::None,
            initial: InitialSpec::default(),
            scheme: TimeScheme::Euler,
            dt: None,
            dt_safety: default_safety(),
            t_end,
            frame_stride: default_stride(),
            seed: 0,
            tolerances: Tolerances::default(),
            loophole: None,
            primed_drive: None,
            bd: None,
            inverse: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        if !(self.beta.is_finite() && self.beta > 0.0 && self.diffusion.is_finite() && self.diffusion > 0.0) {
            return Err(Error::InvalidParameter("β and D must be positive and finite".into()));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) || self.frame_stride == 0 {
            return Err(Error::InvalidParameter("need t_end > 0 and frame-stride >= 1".into()));
        }
        if !(self.dt_safety > 0.0 && self.dt_safety <= 1.0) {
            return Err(Error::InvalidParameter("dt-safety must lie in (0, 1]".into()));
        }
        if self.dt.is_some_and(|dt| !(dt.is_finite() && dt > 0.0)) {
            return Err(Error::InvalidParameter("dt must be positive".into()));
        }
        if self.n_particles == 0 {
            return Err(Error::InvalidParameter("need at least one particle".into()));
        }
        self.closure.validate()?;
        self.pair()?;
        if let Some(l) = &self.loophole {
            if !l.c0.is_finite() || l.rho_floor.is_some_and(|f| !(f > 0.0)) {
                return Err(Error::InvalidParameter("loophole needs finite c0 and rho-floor > 0".into()));
            }
            if !(self.domain.x_min..=self.domain.x_max).contains(&l.x0) {
                return Err(Error::InvalidParameter(format!("loophole anchor {} lies outside the domain", l.x0)));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid1D> {
        Grid1D::new(self.domain.x_min, self.domain.x_max, self.domain.n_cells, self.bc)
    }

    pub fn drive(&self) -> ExternalDrive {
        ExternalDrive::from_potential(self.drive.potential()).with_drift(self.drift)
    }

    pub fn primed(&self) -> Option<ExternalDrive> {
        self.primed_drive.as_ref().map(|d| ExternalDrive::from_potential(d.potential()).with_drift(self.drift))
    }

    pub fn pair(&self) -> Result<PairInteraction> {
        PairInteraction::new(self.interaction, &self.grid()?)
    }

    pub fn fpe1_model(&self) -> Result<Fpe1Model> {
        let grid = self.grid()?;
        Ok(Fpe1Model {
            grid,
            beta: self.beta,
            diffusion: self.diffusion,
            drive: self.drive(),
            pair: PairInteraction::new(self.interaction, &grid)?,
            closure: self.closure.clone(),
            scheme: self.scheme,
        })
    }

    pub fn nbody_model(&self) -> Result<NBodyModel> {
        let grid = self.grid()?;
        Ok(NBodyModel {
            grid,
            n_particles: self.n_particles,
            beta: self.beta,
            diffusion: self.diffusion,
            drive: self.drive(),
            pair: PairInteraction::new(self.interaction, &grid)?,
            scheme: self.scheme,
        })
    }

    /// Initial one-body density on the scenario grid.
    pub fn initial_density(&self) -> Result<ScalarField> {
        let grid = self.grid()?;
        let v = self.drive().potential_at(&grid, 0.0)?;
        let scale_to = |raw: Vec<f64>, mass: f64| -> Result<ScalarField> {
            let s = raw.iter().sum::<f64>() * grid.dx();
            if !(s > 0.0) {
                return Err(Error::Degenerate("initial density has zero mass".into()));
            }
            ScalarField::new(grid, Quantity::Density, raw.into_iter().map(|r| r * mass / s).collect())
        };
        match &self.initial {
            InitialSpec::Boltzmann { amplitude } => ScalarField::new(
                grid,
                Quantity::Density,
                v.iter().map(|x| amplitude * (-self.beta * x).exp()).collect(),
            ),
            InitialSpec::EquilibriumOf { mass } => {
                let vmin = v.iter().copied().fold(f64::INFINITY, f64::min);
                scale_to(v.iter().map(|x| (-self.beta * (x - vmin)).exp()).collect(), *mass)
            }
            InitialSpec::Gaussian { mu, sigma, mass } => {
                if !(*sigma > 0.0) {
                    return Err(Error::InvalidParameter("gaussian width must be positive".into()));
                }
                let raw = grid.cell_centers().iter().map(|x| (-(x - mu).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
                scale_to(raw, *mass)
            }
            InitialSpec::Uniform { mass } => scale_to(vec![1.0; grid.n_cells()], *mass),
            InitialSpec::Sampled { values } => ScalarField::new(grid, Quantity::Density, values.clone()),
        }
    }

    /// Exact cell averages of the Boltzmann profile of the drive at `t = 0`
    /// carrying `mass` (analytic drives only).
    pub fn exact_equilibrium(&self, mass: f64) -> Result<ScalarField> {
        let grid = self.grid()?;
        if matches!(self.drive, DriveSpec::Sampled { .. }) {
            return Err(Error::InvalidParameter("exact equilibrium needs an analytic drive".into()));
        }
        let pot = self.drive.potential();
        let vmin = pot.sample(&grid, 0.0)?.values().iter().copied().fold(f64::INFINITY, f64::min);
        let raw = cell_averages(&grid, |x| (-self.beta * (pot.value(x, 0.0, None) - vmin)).exp());
        let s = raw.iter().sum::<f64>() * grid.dx();
        ScalarField::new(grid, Quantity::Density, raw.into_iter().map(|r| r * mass / s).collect())
    }

    /// Step to use with a given stability bound.
    pub fn choose_dt(&self, bound: f64) -> StepChoice {
        match self.dt {
            Some(dt) if dt <= bound => StepChoice { dt, bound, reduced: false },
            _ => StepChoice { dt: self.dt_safety * bound, bound, reduced: true },
        }
    }
}
