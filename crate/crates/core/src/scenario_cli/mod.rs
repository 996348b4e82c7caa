//! Configuration loading, command dispatch and report emission.

pub mod cli;
pub mod config;
pub mod report;

pub use cli::run;
