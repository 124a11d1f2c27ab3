//! IO, configuration, and command layer over `ltadv-core`.

pub mod commands;
pub mod config;
pub mod runs;
