//! Reverse-mode automatic differentiation on a dynamically recorded tape.
//!
//! Every backward rule is written in terms of recorded [`Var`] operations,
//! so gradients can themselves be differentiated (`create_graph = true`).
//! The discriminator's R1 penalty relies on that.

mod ops;
mod var;

pub use ops::{col2im, im2col, ConvGeom};
pub use var::{grad, grad_with_seed, is_grad_enabled, no_grad, Var};
