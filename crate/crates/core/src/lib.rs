// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cancellation;
pub mod design;
pub mod eval;
pub mod error;
pub mod factor;
pub mod fmt;
pub mod glm;
pub mod graph;
pub mod linalg;
pub mod oracle;
mod par;
pub mod perturbation;
pub mod rng;
pub mod scores;

pub use error::{Error, Result};
