//! Actor-context graph convolution head for spatio-temporal action detection.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod head;
pub mod io;
pub mod synth;
pub mod tensor;
pub mod training;
pub mod tubes;

pub use error::{Error, Result};
pub use head::{GraphHead, GraphHeadConfig, Merge, Model, ModelConfig};
pub use tensor::{seeded_rng, Tensor};
