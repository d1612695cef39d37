//! Command-line front end of the U(1) evolution code: run configuration,
//! free-data families and the subcommands behind the `u1evolve` binary.

pub mod commands;
pub mod config;
pub mod error;
