//! Core library: HVI color space, channel adaptive adjustment operators,
//! alignment losses and image-quality metrics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod caa;
pub mod colorspace;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod io;
pub mod iqa;
pub mod losses;
pub mod pipeline;
pub mod selfcheck;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
