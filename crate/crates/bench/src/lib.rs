//! Declarative experiment runner for `precond-sgd`: TOML configs in,
//! per-run traces and aggregate CSV/JSON reports out.

pub mod cli;
pub mod config;
pub mod report;
