//! Induced model matching: train a full-context model while matching its
//! context-restricted average against an accurate restricted model.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod induction;
pub mod models;
pub mod objectives;
pub mod prob;
pub mod restricted;
pub mod verify;

pub use error::{ImmError, Result};
pub use prob::{Categorical, Dataset, RandomSource, SampleRecord, ShortContextIndex};
