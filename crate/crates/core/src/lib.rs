//! Retinal lesion analysis: fundus preprocessing, lesion detection I/O,
//! segmentation metrics, and an LSTM severity grader trained from scratch.

// `!(x > 0.0)` is used on purpose so NaN parameters fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detect;
pub mod encoder;
pub mod error;
pub mod imageproc;
pub mod model;
pub mod neural;
pub mod pipeline;
pub mod segmetrics;

pub use error::{Error, Result};
