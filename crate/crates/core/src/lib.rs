//! Dynamical density functional tools for overdamped Brownian particles in
//! one dimension: one-body and N-body Smoluchowski solvers, a Brownian
//! dynamics sampler, uniqueness probes for the density-to-potential map,
//! loophole construction and potential inversion.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod bd;
pub mod fields;
pub mod fpe1;
pub mod interactions;
pub mod inverse;
pub mod loophole;
pub mod nbody;
pub mod scenario;
pub mod tensor;
pub mod uniq;

pub use error::{Error, Result};
pub use fields::{BoundaryKind, FluxSchedule, Grid1D, Quantity, ScalarField, TimeSeries, VectorField};
pub use fpe1::{Fpe1Model, Fpe1Run, Fpe1State, TimeScheme};
pub use interactions::{Closure, ExternalDrive, PairInteraction, PairKind, Potential, SpaceProfile, TimeProfile};
pub use tensor::DensityTensor;
pub use loophole::{LoopholeReport, LoopholeSpec, LoopholeVerdict};
pub use scenario::Scenario;
