//! Downlink sum-rate maximization for a fluid-antenna base station assisted
//! by a liquid intelligent metasurface.

pub mod ao;
pub mod baselines;
pub mod channel;
pub mod cli;
pub mod error;
pub mod gradients;
pub mod harness;
pub mod model;
pub mod solver;

pub use error::{Error, Result};

/// Complex baseband sample.
pub type C64 = nalgebra::Complex<f64>;
