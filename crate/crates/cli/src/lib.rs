//! Library side of the `pure` command-line tool.

pub mod commands;
pub mod config;
