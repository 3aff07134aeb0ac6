//! Single-shot traffic-sign detector with multi-resolution deconvolution
//! fusion and a spatial sequence attention head.

pub mod cli;
mod error;
pub mod dataset;
pub mod detection;
pub mod evaluator;
pub mod head;
pub mod model;
pub mod mrfeature;
pub mod nn;
pub mod pipeline;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use head::Orientation;
pub use model::{Detector, ForwardOutput, ModelConfig, ANCHORS_PER_CELL};
pub use vssa_autodiff as autodiff;
