//! Temporal Gaussian Mixture agent: variational Gaussian-mixture perception
//! with data forgetting, Dirichlet-categorical transition learning and
//! belief-weighted Q-learning, plus a noisy-observation maze simulator.

pub mod agent;
pub mod checkpoint;
pub mod distributions;
pub mod env;
pub mod error;
pub mod meanshift;
pub mod planner;
pub mod structure;
pub mod transition;
pub mod vgm;

pub use error::{Result, TgmError};
