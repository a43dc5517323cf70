//! Desk-scale experiment harnesses and their result plumbing.

pub mod logreg;
pub mod output;
pub mod plot;
pub mod quality;
pub mod rl;
pub mod serialized;
pub mod stats;
pub mod toylm;
