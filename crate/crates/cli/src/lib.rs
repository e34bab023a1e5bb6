//! Library half of the `cpuq` binary: argument definitions, file formats,
//! run manifests and the subcommand implementations.

pub mod commands;
pub mod error;
pub mod format;
pub mod manifest;
