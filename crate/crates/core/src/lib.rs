//! Gradient inversion laboratory.
//!
//! Simulates what an honest-but-curious federated server observes (per-sample
//! gradients, defended and summed), and attacks those observations with a
//! learned inverter trained on auxiliary data or with gradient-matching
//! optimization baselines.

pub mod adam;
pub mod data;
pub mod error;
pub mod experiment;
pub mod federated;
pub mod hashing;
pub mod lti;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod recon;
pub mod rng;

pub use error::{Error, Result};
