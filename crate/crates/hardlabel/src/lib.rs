//! Std companion to `hardlabel-core`: file formats, a thread-pool executor,
//! budget forecasts, run manifests and the command implementations behind
//! the `hardlabel` binary.

pub mod budget;
pub mod commands;
pub mod error;
pub mod exec;
pub mod format;
pub mod manifest;
pub mod report;
pub mod transcript;

pub use error::CliError;
pub use hardlabel_core as core;
