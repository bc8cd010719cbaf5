//! Dual-modality prompt tuning for a desk-scale frozen CLIP-style dual encoder.

pub mod backbone;
pub mod container;
pub mod error;
pub mod harness;
pub mod prompt;
pub mod rng;
pub mod trainer;
pub mod tensor;

pub use error::{DptError, Result};
pub use tensor::Tensor;
