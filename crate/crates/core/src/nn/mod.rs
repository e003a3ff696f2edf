//! A small reverse-mode engine for sequential conv/dense networks.
//!
//! Activations are stored `[batch, height, width, channels]` for images and
//! `[batch, features]` for vectors. Every layer records what it needs during a
//! training forward pass; [`Network::backward`] replays that record in reverse.

mod gradcheck;
mod layers;
mod loss;
mod network;
mod optim;
mod scalar;
mod tensor;

pub use gradcheck::{gradient_check, numeric_gradients, relative_error};
pub use layers::{Layer, LayerSpec, Param, Units};
pub use loss::{huber_loss, mse_loss, HuberConfig};
pub use network::{BackwardFault, Gradients, Network};
pub use optim::{Optimizer, OptimizerKind};
pub use scalar::Scalar;
pub use tensor::{Tensor, TensorMap};
