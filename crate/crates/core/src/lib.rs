pub mod autograd;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod heatmap;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod optim;
pub mod segmentation;
pub mod synthdata;
pub mod tensor;

pub use error::{Error, Result};
