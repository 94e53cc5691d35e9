//! Command-line surface of `vsematch`: file formats, report emission and
//! the `synth`, `train` and `eval` commands.

pub mod commands;
pub mod error;
pub mod format;
pub mod report;

pub use commands::{run, run_from, Cli, Command};
pub use error::{CliError, Result};
