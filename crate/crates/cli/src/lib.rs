//! Subcommand plumbing for the `scene-factor` binary.

pub mod config;
pub mod experiments;
