pub mod autodiff;
pub mod cli;
pub mod config;
pub mod conversion;
pub mod data;
pub mod diffusion;
pub mod energy;
pub mod error;
pub mod network;
pub mod neuron;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
