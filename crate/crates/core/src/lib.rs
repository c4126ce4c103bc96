//! Wind-noise reduction by stochastic regeneration.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod corruption;
pub mod error;
pub mod manifest;
pub mod metrics;
mod nn;
pub mod pipeline;
pub mod score;
pub mod sde;
pub mod sde_check;
pub mod signal;
pub mod wind;

pub use error::{Error, Result};
