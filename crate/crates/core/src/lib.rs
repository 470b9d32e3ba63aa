//! Triplet metric learning with positive–negative distance regularization (NPLB),
//! its baselines, synthetic cohort tooling and a single-visit health-risk engine.

pub mod cohort;
pub mod error;
pub mod eval;
pub mod losses;
pub mod net;
pub mod numeric;
pub mod pipeline;
pub mod risk;
pub mod trainer;

pub use error::{Error, Result};
