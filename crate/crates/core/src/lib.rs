//! Logit-range calibration for adapted vision-language classifiers.
//!
//! Works entirely on cached embeddings: zero-shot prototypes, few-shot
//! adapters trained by full-batch SGD, test-time entropy minimization, and
//! three ways of keeping adapted logits inside the zero-shot logit range
//! (training-time rescaling, ReLU range penalties, and post-hoc sample-wise
//! rescaling). Metrics cover accuracy, ECE and logit norm/range statistics.
//!
//! The crate is `no_std` and only needs `alloc`; file formats and the CLI
//! live in the `logitrange` crate.

#![no_std]
// `!(x > 0.0)` is how NaN gets rejected alongside non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// backward passes walk several row-aligned buffers by index
#![allow(clippy::needless_range_loop)]
extern crate alloc;

pub mod adapters;
pub mod calibration;
pub mod dataset;
pub mod error;
pub mod math;
pub mod matrix;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod synth;
pub mod tta;
pub mod zeroshot;

pub use error::{Error, Result};
pub use matrix::Matrix;
