//! Anchor-free tree detection, built on a small dense-tensor library with
//! tape-based reverse-mode differentiation.
//!
//! Layers, bottom-up:
//!
//! - [`tensor`], [`autograd`], [`ops`]: tensors, the tape, differentiable ops.
//! - [`model`]: residual encoder with ASPP, FPN fusion, attention refiner and
//!   the three-branch anchor-free head.
//! - [`objectives`]: per-location target assignment and the weighted
//!   focal + GIoU + centerness loss.
//! - [`postprocess`]: decoding, NMS and tile merging.
//! - [`datapipe`]: annotations, tiling, augmentation, synthetic scenes.
//! - [`trainer`], [`checkpoint`], [`evaluator`].

pub mod autograd;
pub mod boxes;
pub mod checkpoint;
pub mod datapipe;
pub mod error;
pub mod evaluator;
mod gemm;
pub mod gradcheck;
pub mod inference;
pub mod model;
pub mod objectives;
pub mod ops;
pub mod postprocess;
pub mod tensor;
pub mod trainer;

pub use autograd::{Function, Tape, Var};
pub use boxes::BBox;
pub use error::{Error, Result};
pub use tensor::Tensor;
