//! Configuration loading, report bundles and subcommand bodies for the
//! `css-envelope` binary.

pub mod commands;
pub mod config;
pub mod report;
