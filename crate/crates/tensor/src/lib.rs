//! Dense CPU tensors with reverse-mode automatic differentiation and the
//! handful of layers a small convolutional encoder needs: 3x3 convolution,
//! batch normalization, ReLU, 2x2 max pooling, linear layers, softmax and
//! cross-entropy, plus SGD/Adam.

mod array;
mod element;
mod error;
pub mod gradcheck;
pub mod init;
pub mod ops;
mod optim;
mod params;
mod tensor;

pub use array::NdArray;
pub use element::Element;
pub use error::{Result, TensorError};
pub use optim::{AdamHyper, Optimizer, OptimizerKind};
pub use params::{BoundParams, Group, Param, ParamSet};
pub use tensor::{BackwardFn, Tensor};
