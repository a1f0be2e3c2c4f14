pub mod error;
pub mod explain;
pub mod image;
pub mod metrics;
pub mod model;
pub mod protocol;
pub mod scores;
pub mod seed;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
