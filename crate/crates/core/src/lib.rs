//! Subspace attention for compact convolutional networks.
//!
//! The crate provides a small tensor engine with analytic gradients, the
//! ULSAM attention block, MobileNet-V1/V2 builders that accept ULSAM
//! insertions, an exact parameter and MAC analyzer, and an SGD trainer for
//! CIFAR-style data.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod cli;
pub mod config;
pub mod cost;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod module;
pub mod ops;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Element, Shape, Tensor};
