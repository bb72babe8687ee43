pub mod error;
pub mod features;
pub mod imagecore;
mod netpbm;
pub mod pipeline;
pub mod salience;
pub mod scaling;
pub mod stats;
pub mod synthetic;
pub mod vbow;
pub mod video;

pub use error::{Error, Result};
