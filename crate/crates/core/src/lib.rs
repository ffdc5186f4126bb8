//! Convolutional network training from first principles.
//!
//! Every layer carries a hand-derived forward and backward rule; nothing here
//! relies on automatic differentiation. The [`gradcheck`] module checks each
//! rule against central finite differences, and [`network::Network`] wires
//! the layers into the LeNet-style reference classifier trained on MNIST.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod layers;
pub mod mnist;
pub mod network;
pub mod optim;
pub mod parallel;
pub mod tensor;

pub use error::{Error, Result};
