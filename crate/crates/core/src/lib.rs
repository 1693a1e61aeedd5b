//! Early-branching dual-branch networks for domain generalization.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod independence;
pub mod network;
pub mod objectives;
pub mod style;

pub use array::Array;
pub use error::{Error, Result};
pub mod cli;
