//! Semantic transformation between dense and sparse text representations.
//!
//! The library provides a forward transform from dense vectors into a
//! high-dimensional sparse space, a backward transform returning to the dense
//! space, sentence composition performed directly on sparse codes, the
//! training objective combining prediction, margin, base-norm, and
//! reconstruction terms, plus the measurement and training machinery needed
//! to run the whole thing on text-classification and sentence-pair tasks.

pub mod activations;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod objectives;
pub mod tensor;
pub mod transform;

pub use error::{Error, Result};
