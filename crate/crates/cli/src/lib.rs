//! Library side of the `resflow` command-line tool.

pub mod checkpoint;
pub mod commands;
pub mod config;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
