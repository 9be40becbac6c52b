//! File formats, configuration, and pipeline plumbing for the `mergeq`
//! command-line laboratory. The numeric core lives in `mergeq-core`;
//! this crate adds everything that touches the filesystem.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

pub use error::{CliError, Result};
