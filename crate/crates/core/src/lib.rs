//! Build, analyze, run and evaluate YOLO11-4K style detectors on the CPU.

// NaN-rejecting guards are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod autodiff;
pub mod blocks;
pub mod cli;
pub mod error;
pub mod evalkit;
pub mod exec;
pub mod geometry;
pub mod gradcheck;
pub mod graph;
pub mod infer;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
