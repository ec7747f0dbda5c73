pub mod config;
pub mod detection;
pub mod error;
pub mod filter;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod pointprocess;
pub mod simulate;
pub mod tensor;
pub mod tracker;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Graph, Padding, Tensor, Var};
