//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its forward
//! value and the information needed to propagate gradients. Nodes are
//! appended in evaluation order, so the tape is already topologically sorted
//! and [`Graph::backward`] simply walks it in reverse.
//!
//! The operator set is deliberately narrow: it covers what a U-Net generator
//! and a PatchGAN discriminator need (convolutions, transposed convolutions,
//! instance normalization, pointwise activations, channel concatenation) and
//! the losses used to train them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod checkpoint;
mod error;
mod graph;
mod kernels;
mod optim;
mod tensor;

pub use checkpoint::{Checkpoint, NamedTensor};
pub use error::{AutodiffError, Result};
pub use graph::{Graph, Var};
pub use kernels::conv_output_size;
pub use optim::{adam_step, AdamConfig, AdamState};
pub use tensor::Tensor;
