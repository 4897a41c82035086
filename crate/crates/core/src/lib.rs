//! Content-based retrieval of rated image patches: rating-set distances,
//! distance-matrix metric-learning losses, a small from-scratch embedding
//! network, hubness-aware retrieval evaluation and annotation metrics.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annotation;
pub mod error;
pub mod exec;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod ratings;
pub mod retrieval;

pub use error::{Error, ErrorKind, Result};
pub use exec::Execution;
