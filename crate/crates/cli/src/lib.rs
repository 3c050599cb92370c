//! Library side of the `fracsaddle` command: configuration, stages and artifact handling.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod stages;

pub use error::CliError;
