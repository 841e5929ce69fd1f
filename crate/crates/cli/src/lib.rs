//! Library surface of the benchmark CLI, exposed so integration tests can
//! drive commands in-process.

pub mod commands;
pub mod config;
pub mod output;
