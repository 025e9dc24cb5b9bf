//! Nadam with schedule decay and a reduce-on-plateau learning-rate controller.

mod nadam;
mod plateau;

pub use nadam::{nadam_step, NadamConfig, NadamState};
pub use plateau::{PlateauConfig, PlateauController, PlateauState};
