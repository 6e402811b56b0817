//! Self-supervised point-cloud pretraining by masked clustering.
//!
//! Two randomly masked views of a patch-tokenized point cloud pass through a
//! shared transformer autoencoder. Reconstructed patch features drive a
//! geo-semantic affinity graph and a differentiable clustering head; the
//! views supervise each other through balanced optimal-transport
//! assignments, Chamfer matching of pooled cluster centers, and a
//! stop-gradient cosine objective between class tokens and pooled features.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod backbone;
pub mod clustering;
pub mod contrastive;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod harness;
pub mod nn;
pub mod pointcloud;
pub mod tensor;

pub use autodiff::{Grads, Precision, Tape, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
