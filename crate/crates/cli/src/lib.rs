//! Library side of the `lp-eirl1` command-line tool: configuration loading and
//! the `generate`, `solve`, `bench` and `diagnose` subcommands.

// NaN-rejecting checks are written as negated comparisons on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{cmd_bench, cmd_diagnose, cmd_generate, cmd_solve, StartPoint};
pub use config::{AlphaValue, Overrides, RunConfigFile};
pub use error::CliError;
