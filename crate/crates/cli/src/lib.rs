//! Library side of the `rsnpe` command-line tool, exposed so the commands
//! can be driven from tests.

pub mod commands;
pub mod config;
pub mod plot;
