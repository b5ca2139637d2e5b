//! File formats, experiment harness and profiling for `longconv-core`.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod profiler;
pub mod report;

pub use error::{Error, Result};
