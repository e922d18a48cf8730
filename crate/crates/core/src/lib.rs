//! Markov chain transitions written as permutations of a finite extended
//! state space, or as volume-preserving maps of a continuous one.
//!
//! The same fixed map drives any number of chains without letting them
//! coalesce, and can be run backwards to compute exact importance weights.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod continuous;
pub mod discrete_general;
pub mod discrete_uniform;
pub mod error;
pub mod importance;
pub mod models;
pub mod numeric;
pub mod parallel;
pub mod stats;
pub mod stream;

pub use error::{Error, Result};
