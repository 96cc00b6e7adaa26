//! Non-stationary diffusion forecasting.

pub mod cli;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod estimators;
pub mod learner;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};
