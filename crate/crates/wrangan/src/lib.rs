//! IO, file formats and experiment drivers around `wrangan-core`: synthetic
//! data generation, PNG import/export, checkpoints, run configuration, CSV
//! reports and the subcommand pipeline used by the CLI binary.

pub mod checkpoint;
pub mod config;
pub mod imageio;
pub mod pipeline;
pub mod report;
pub mod synthetic;
