//! Event representation learning with prompt-template contrastive augmentation.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub mod augment;
pub mod text;
pub mod encoder;
pub mod objectives;
pub mod trainer;
pub mod data;
pub mod eval;
pub mod cli;
