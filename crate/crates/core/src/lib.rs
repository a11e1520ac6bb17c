pub mod attention;
pub mod error;
pub mod frontend;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod separator;
pub mod speaker;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = nn::Tensor<f32>;
pub type Model = model::Model<f32>;
pub type FrameOutput = model::FrameOutput<f32>;
