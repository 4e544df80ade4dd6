//! Part-based neural-field avatar generator fine-tuned with score
//! distillation, with a tetrahedral mesh-extraction stage.

pub mod body;
pub mod error;
pub mod features;
pub mod finetune;
pub mod generator;
pub mod image;
pub mod mesh;
pub mod nn;
pub mod pipeline;
pub mod prior;
pub mod rng;

pub use error::{Error, Result};
