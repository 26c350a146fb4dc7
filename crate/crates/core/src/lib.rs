//! Pose forecasting for avatars in two-person conversation: streams, model,
//! training, rollout, metrics, and file formats.

pub mod backbone;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pose;
pub mod rng;
pub mod rollout;
pub mod skeleton;
pub mod streams;
pub mod synth;
pub mod tape;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
