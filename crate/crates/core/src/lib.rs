//! Offline reinforcement learning from a fitted dynamics model plus its
//! empirical residuals.

pub mod approx;
pub mod dqn;
pub mod env;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod io;
pub mod mdp;
pub mod residual;
pub mod rng;

pub use error::{Error, Result};
