//! Minimal differentiable kernel for the autoencoder: 1-D convolution and its
//! transpose, ReLU, mean-squared error, AdamW and a finite-difference checker.
//! Everything computes in `f64`.

mod conv;
mod gradcheck;
mod ops;
mod optim;
mod tensor;

pub use conv::{conv1d_backward, conv1d_forward, tconv1d_backward, tconv1d_forward, ConvLayer, LayerGrads};
pub use gradcheck::{grad_check, relative_error};
pub use ops::{mse_loss, relu, relu_backward, relu_in_place};
pub use optim::{AdamW, AdamWConfig};
pub use tensor::Tensor3;
