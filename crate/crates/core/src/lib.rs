//! Episodic-memory manipulation testbed.
//!
//! The pipeline is perception -> memory -> policy: geometry-biased cross-view
//! perception produces fused evidence tokens, a hierarchical slot-structured
//! state-space memory turns them into a single decision state, and a
//! rectified-flow policy generates end-effector trajectories conditioned on
//! that state alone. A synthetic multi-view simulator provides the three
//! perceptually-aliased task families used for training and evaluation.
//!
//! The numeric core is generic over the scalar type: `f32` for training,
//! `f64` for gradient verification.

pub mod autodiff;
pub mod config;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod memory;
pub mod nn;
pub mod optim;
pub mod holohead;
pub mod perception;
pub mod policy;
pub mod scalar;
pub mod sim;
pub mod tensor;

/// Default training scalar.
pub type Real = f32;
/// Scalar used by gradient checks and numeric oracles.
pub type Check = f64;

pub use error::{EngramError, Result};
