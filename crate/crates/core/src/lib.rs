pub mod concepts;
pub mod engine;
pub mod error;
pub mod graph;
pub mod hdbscan;
pub mod io;
pub mod metrics;
pub mod model;
pub mod prototype;
pub mod reporting;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
