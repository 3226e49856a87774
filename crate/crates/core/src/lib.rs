//! Simulation and bound certification for model reference adaptive control
//! with closed-loop reference models.

pub mod adaptlaw;
pub mod bounds;
pub mod error;
pub mod matan;
pub mod metrics;
pub mod models;
pub mod proj;
pub mod sim;

pub use error::{Error, Result};
