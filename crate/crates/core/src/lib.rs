//! Simulation engines and analysis for monitored random circuits with
//! measurement-conditioned feedback on an open chain.
//!
//! Engines:
//! - [`channel`]: exact density-matrix evolution (small chains, oracle role).
//! - [`statevector`]: pure-state quantum trajectories.
//! - [`mps`]: matrix-product-state trajectories with bond truncation.
//! - [`markov`]: classical bitstring stochastic model.
//!
//! Analysis lives in [`observables`], [`continuum`] and [`budget`]; the
//! [`experiment`] module ties everything to configuration files and CSV output.

pub mod budget;
pub mod channel;
pub mod circuit;
pub mod config;
pub mod continuum;
pub mod csvio;
pub mod error;
pub mod experiment;
pub mod gates;
pub mod markov;
pub mod mps;
pub mod observables;
pub mod seed;
pub mod statevector;
pub mod trajectory;

#[cfg(test)]
mod invariants;

pub use circuit::{
    build_program, Architecture, CircuitProgram, CircuitSpec, FeedbackRule, InitialState,
    MeasurementEvent, MeasurementProfile, RandomLayer, SelectionMode, SwapOrder,
};
pub use config::{EngineKind, ExperimentConfig};
pub use error::{Error, Result};
pub use gates::BlockOrder;
pub use observables::{DensitySeries, RealizationSummary, ScalarSeries};
pub use seed::derive_stream_seed;
pub use trajectory::{SiteEvent, TrajectoryRecord};
