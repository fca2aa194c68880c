//! Weighted Haar systems on bounded dyadic meshes, truncated λ-fractional
//! Calderón–Zygmund operators, and the two-weight testing and Muckenhoupt
//! characteristics that compare them.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod characteristics;
pub mod cli;
pub mod config;
pub mod dyadic;
pub mod error;
pub mod experiments;
pub mod frames;
pub mod haar;
pub mod measure;
pub mod operator;
mod quad;

pub use error::{Error, Result};
