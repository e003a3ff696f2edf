//! Imitation-pretrained DDPG for image-based driving on a 2D track.
//!
//! The pipeline: a scripted (or human) driver produces demonstrations, a
//! small residual actor is behaviour-cloned from them with a Huber loss, and
//! the cloned weights seed a DDPG run whose convolutional backbone stays
//! frozen, whose replay buffer is pre-filled by the cloned policy, and which
//! acts without exploration noise.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod demolog;
pub mod error;
pub mod eval;
pub mod expert;
pub mod il;
pub mod nn;
pub mod policy;
pub mod reward;
pub mod rollout;
pub mod rl;
pub mod seed;
pub mod sim;
pub mod types;

pub use error::{Error, Result};
pub use types::{Action, Observation, StepInfo, Transition};
