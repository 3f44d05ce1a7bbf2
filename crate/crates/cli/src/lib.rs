//! Command-line experiments: dataset loading, benchmarks, kernel fitting,
//! theory verification and report emission.

pub mod commands;
pub mod data;
pub mod error;
pub mod experiments;
pub mod report;

pub use commands::run_command;
