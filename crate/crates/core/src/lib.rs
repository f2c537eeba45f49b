pub mod aggregate;
pub mod cli;
pub mod encoder;
pub mod error;
pub mod featio;
pub mod higia;
pub mod metrics;
pub mod model;
pub mod msaf;
pub mod nn;
pub mod numkernel;
pub mod trainer;

pub use error::{Error, Result};
