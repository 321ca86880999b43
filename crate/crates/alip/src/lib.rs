//! Load disaggregation by aided linear integer programming.
//!
//! Given a single aggregate power reading per timestep and a declarative
//! household model, the engine infers which appliance states are active by
//! solving a small mixed-integer program per sample, then cleans the state
//! stream with transition-diagram correction and lagged median filtering,
//! and finally refines transient power draws with a bounded LP.

pub mod formulation;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod simgen;
pub mod solver;

pub use formulation::{Enhancements, MilpInstance, StateAssignment};
pub use model::{ApplianceSpec, HouseholdModel, StateSpec};
pub use pipeline::{DisaggregationResult, PipelineConfig};
