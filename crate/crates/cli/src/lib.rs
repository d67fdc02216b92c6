//! Library surface of the command-line runner: configuration loading,
//! report/artifact persistence, and the per-subcommand orchestration. The
//! binary in `main.rs` is a thin argument-parsing shell over this.

pub mod config;
pub mod report;
pub mod runner;
