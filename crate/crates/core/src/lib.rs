//! Differential face-morph detection with Siamese contrastive embeddings.

pub mod baselines;
pub mod cam;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod face_prep;
pub mod heads;
pub mod imaging;
pub mod metrics;
pub mod morph;
pub mod nn;
pub mod pipeline;
pub mod svm;
pub mod synth;
pub mod testbed;
pub mod train;

pub use error::{Error, Result};
