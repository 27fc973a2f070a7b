//! Experiment harness behind the `reflexgrasp` binary.

pub mod accept;
pub mod campaign;
pub mod commands;
pub mod error;

pub use commands::{run, Cli};
