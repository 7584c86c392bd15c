//! Reinforcement-learning design of material calibration experiments.
//!
//! A policy-value network guides a Monte-Carlo tree search over sequences of
//! strain increments. Each candidate experiment is replayed through a
//! synthetic elastoplastic specimen and a Kalman-filter calibrator whose
//! information gain (optionally mixed with a forecast score) is the reward.

pub mod constitutive;
pub mod environment;
pub mod error;
pub mod kalman;
pub mod mcts;
pub mod policynet;
pub mod reward;
pub mod trainer;

pub use error::{Error, Result};
