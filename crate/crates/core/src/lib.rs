//! Union convolution and the Union-net image classifier.
//!
//! A union block runs four stacks of 3×3 convolutions (depths 1 to 4) over the
//! same input and sums their outputs, so it behaves like one wide-receptive-field
//! convolution layer. Union-net chains three such blocks, adds their outputs
//! together, and finishes with one more convolution, global average pooling and
//! a linear softmax classifier.
//!
//! The crate is self-contained: [`tensor`] holds the numerical kernels with
//! hand-written backward passes, [`arch`] assembles them into the model,
//! [`optim`] has Nadam and the plateau learning-rate controller, [`data`] loads
//! CIFAR-10 binaries and PPM image folders, and [`train`] runs training,
//! evaluation and k-fold cross-validation.

pub mod arch;
pub(crate) mod codec;
pub mod data;
pub mod error;
pub mod optim;
pub mod tensor;
pub mod train;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
