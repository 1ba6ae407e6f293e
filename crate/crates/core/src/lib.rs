pub mod ajl;
pub mod analytics;
pub mod config;
pub mod error;
pub mod lm;
pub mod pipeline;
pub mod preprocess;
pub mod simulate;
pub mod tickstore;
pub mod weights;
pub mod workflow;

pub use error::{Error, Result};
