//! Sensor network localization from partial distance data by merging the
//! faces of the PSD cone that belong to cliques of the measurement graph.
//!
//! The pipeline: [`instance`] builds the partial distance data, [`reducer`]
//! grows and merges cliques using [`faces`], and [`recovery`] turns the final
//! face into coordinates aligned to the anchors. [`solver::solve`] wires them
//! together; [`cli`] runs batches of random trials.

pub mod cli;
pub mod edm;
pub mod error;
pub mod faces;
pub mod instance;
pub mod recovery;
pub mod reducer;
pub mod solver;
pub mod tolerance;

pub use error::{Result, SnlError};
pub use instance::{generate_instance, Instance, PartialEdm, Problem};
pub use reducer::StepLevel;
pub use solver::{solve, SolveOptions, SolveReport};
pub use tolerance::{RankTolerance, Tolerances};
