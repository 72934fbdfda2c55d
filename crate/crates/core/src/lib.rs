//! Bi-encoder embedding training with relevance-margin losses, plus the
//! TREC-style evaluation and equivalence testing used to compare runs.

pub mod cli;
pub mod data;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod stats;
pub mod trainer;
