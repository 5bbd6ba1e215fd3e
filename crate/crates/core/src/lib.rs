//! Simulation and localization of coordinated cyber-physical attacks on DC
//! power grids.

pub mod case_model;
pub mod error;
pub mod estimation;
pub mod powerflow;
pub mod attacks;
pub mod mtd;
pub mod neuralnet;
pub mod meta;
pub mod datagen;
pub mod evaluation;

pub use error::{Error, Result};
