//! Command-line front end for `seg-uq`: subcommands, the cohort pipeline and
//! its JSON report.

pub mod commands;
pub mod config;
pub mod gradcheck;
pub mod pipeline;
pub mod report;
