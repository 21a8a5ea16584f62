pub mod analysis;
pub mod convolution;
pub mod error;
pub mod mempool;
pub mod netgraph;
pub mod reference;
pub mod scheduler;
pub mod taskgraph;
pub mod tensor_ops;
pub mod trainer;

pub use error::{Error, Result};
