//! Underwater scene-understanding toolkit: image-formation physics, feature
//! enhancement with a toy encoder pipeline, instruction-data generation and
//! an evaluation harness for the resulting eight-task benchmark.

pub mod bbox;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod imaging;
pub mod jsonl;
pub mod pipeline;
pub mod selfcheck;
pub mod tensors;
pub mod vfe;

pub use error::{Error, Result};
