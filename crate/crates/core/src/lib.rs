//! Set-based optimization over several black-box models of unranked
//! fidelity.
//!
//! The decision space is partitioned into boxes; each model classifies every
//! box as inside, outside, or undetermined with respect to its own target
//! region, and a box is settled once the models agree strongly enough under
//! a probability-weighted consistency score. The [`analysis`] module gives
//! the exact probabilities of correct, incorrect, and inconsistent verdicts
//! for independent models.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the common double-precision instantiation.

pub mod analysis;
pub mod classify;
pub mod consistency;
pub mod engine;
pub mod error;
pub mod models;
pub mod report;
pub mod scalar;
pub mod space;
pub mod validate;

pub use consistency::{ConsistencyParams, Verdict};
pub use engine::{Engine, RunConfig, SolutionSet, StopReason};
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Hyperbox64 = space::Hyperbox<f64>;
pub type DecisionSpace64 = space::DecisionSpace<f64>;
pub type ModelSpec64 = models::ModelSpec<f64>;
pub type TruthRaster64 = models::TruthRaster<f64>;
pub type Scenario64 = analysis::Scenario<f64>;
pub type ProbabilityTable64 = consistency::ProbabilityTable<f64>;
pub type Engine64 = engine::Engine<f64>;
pub type SolutionSet64 = engine::SolutionSet<f64>;

pub type Hyperbox32 = space::Hyperbox<f32>;
pub type Engine32 = engine::Engine<f32>;
pub type SolutionSet32 = engine::SolutionSet<f32>;
