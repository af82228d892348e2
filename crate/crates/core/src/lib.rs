pub mod bits;
pub mod detector;
pub mod digitizer;
pub mod entropy;
pub mod error;
pub mod extract;
pub mod laser;
pub mod pipeline;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
