//! Command-line driver, run configuration and the policy bridge client for
//! the skill-library trainer in `arise-core`.

pub mod bridge;
pub mod cli;
pub mod config;
pub mod manifest;
