//! Scenario ingestion, experiment orchestration and validation reporting for
//! the `mvgmp` binary.

pub mod commands;
pub mod config;
pub mod output;
pub mod suite;
