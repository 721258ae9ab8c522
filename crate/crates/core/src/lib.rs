//! Failure-resilient visual navigation: a compact imitation-learned policy
//! with latent-space anomaly scoring, conformal score bands, gradient-based
//! attribution, and a heatmap-informed recovery controller, exercised in a
//! small 2-D simulator.

pub mod baselines;
pub mod cli;
pub mod conformal;
pub mod error;
pub mod eval;
pub mod io;
pub mod policy;
pub mod recovery;
pub mod simworld;
pub mod tensor;

pub use error::{Error, Result};
