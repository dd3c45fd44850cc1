//! Heterogeneous-kernel super-resolution WGAN engine.
//!
//! The crate is layered bottom-up:
//!
//! * [`tensor`]: dense tensors, a tape-based reverse-mode autodiff [`Graph`],
//!   and im2col convolution kernels.
//! * [`nn`]: HetConv layers, HetResidual blocks, the ×4 generator, the
//!   BN-free Wasserstein critic, and exact parameter/MAC accounting.
//! * [`loss`]: gradient cosine similarity, the composite generator
//!   objective, WGAN critic terms, PSNR and SSIM.
//! * [`data`]: PNG I/O, antialiased bicubic degradation, patches, batches.
//! * [`train`]: Adam / averaged SGD, the adversarial training loop,
//!   checkpoints and metric logs.

pub mod data;
pub mod error;
pub mod loss;
pub mod nn;
pub mod parallel;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Element, Graph, Tensor, Var};
