use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field values must be finite (first offending index {index})")]
    NonFinite { index: usize },

    #[error("density must be non-negative (value {value:e} at index {index})")]
    NegativeDensity { index: usize, value: f64 },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported interaction: {0}")]
    UnsupportedInteraction(String),

    #[error("closure unavailable: {0}")]
    ClosureUnavailable(String),

    #[error("time step {dt:e} exceeds stability bound {bound:e}")]
    StepTooLarge { dt: f64, bound: f64 },

    #[error("instability: density fell to {value:e} at t = {t} (index {index})")]
    Instability { t: f64, index: usize, value: f64 },

    #[error("tensor grid of {cells} cells exceeds the memory budget of {budget}")]
    BudgetExceeded { cells: usize, budget: usize },

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("need at least {needed} frames, got {got}")]
    TooFewFrames { needed: usize, got: usize },

    #[error("derivative order {k_max} is beyond the stable stencil range (max {max})")]
    OrderTooHigh { k_max: usize, max: usize },

    #[error("nothing to check: potentials are diffusion equivalent up to the declared order")]
    NoOrder,

    #[error("degenerate check: {0}")]
    Degenerate(String),

    #[error("density profile too degenerate: {below} of {total} cells below the floor")]
    DegenerateProfile { below: usize, total: usize },

    #[error("no realizing potential: continuity residual {residual:e} exceeds {tolerance:e}")]
    NoRealizingPotential { residual: f64, tolerance: f64 },

    #[error("unknown name: {0}")]
    UnknownName(String),
}
