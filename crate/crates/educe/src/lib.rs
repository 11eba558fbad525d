//! File formats, run configuration and the `educe` command-line driver on
//! top of `educe-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod report;
pub mod run;

pub use error::{CliError, Result};
